use crate::{Error, Mat, Result};

/// Symmetric-normalized user-item interaction graph for one domain.
///
/// Edge weights are 1/sqrt(deg_u * deg_v). Propagation has no per-layer
/// transforms, so the stacked (user, item) operator is a symmetric matrix:
/// applying the same propagation to upstream gradients is the exact adjoint,
/// which is how the backward pass is implemented.
#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    edges: Vec<(usize, usize, f64)>,
    user_degree: Vec<usize>,
    item_degree: Vec<usize>,
}

impl BipartiteGraph {
    /// Build from per-user training item lists.
    pub fn from_train(train: &[Vec<usize>], num_items: usize) -> Result<Self> {
        let mut user_degree = vec![0usize; train.len()];
        let mut item_degree = vec![0usize; num_items];
        for (u, items) in train.iter().enumerate() {
            for &i in items {
                if i >= num_items {
                    return Err(Error::Data(format!(
                        "graph edge to item {i} out of range ({num_items} items)"
                    )));
                }
                user_degree[u] += 1;
                item_degree[i] += 1;
            }
        }
        let mut edges = Vec::new();
        for (u, items) in train.iter().enumerate() {
            for &i in items {
                let w = 1.0 / ((user_degree[u] * item_degree[i]) as f64).sqrt();
                edges.push((u, i, w));
            }
        }
        Ok(BipartiteGraph {
            edges,
            user_degree,
            item_degree,
        })
    }

    pub fn num_users(&self) -> usize {
        self.user_degree.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_degree.len()
    }

    /// One aggregation step; isolated nodes pass through unchanged.
    fn step(&self, users: &Mat, items: &Mat) -> (Mat, Mat) {
        let d = users.cols();
        let mut next_u = Mat::zeros(users.rows(), d);
        let mut next_i = Mat::zeros(items.rows(), d);
        for &(u, i, w) in &self.edges {
            for k in 0..d {
                let ui = next_u.get(u, k) + w * items.get(i, k);
                next_u.set(u, k, ui);
                let iv = next_i.get(i, k) + w * users.get(u, k);
                next_i.set(i, k, iv);
            }
        }
        for (u, &deg) in self.user_degree.iter().enumerate() {
            if deg == 0 {
                next_u.row_mut(u).copy_from_slice(users.row(u));
            }
        }
        for (i, &deg) in self.item_degree.iter().enumerate() {
            if deg == 0 {
                next_i.row_mut(i).copy_from_slice(items.row(i));
            }
        }
        (next_u, next_i)
    }

    /// Propagate `layers` steps and return the mean of layer outputs 0..layers.
    ///
    /// The map (users, items) -> output is linear and self-adjoint, so this
    /// same function backpropagates gradients.
    pub fn propagate(&self, users: &Mat, items: &Mat, layers: usize) -> Result<(Mat, Mat)> {
        if users.rows() != self.num_users() || items.rows() != self.num_items() {
            return Err(Error::shape(
                "propagate",
                format!("{} users x {} items", self.num_users(), self.num_items()),
                format!("{} x {}", users.rows(), items.rows()),
            ));
        }
        if users.cols() != items.cols() {
            return Err(Error::shape(
                "propagate",
                format!("{} cols", users.cols()),
                format!("{} cols", items.cols()),
            ));
        }
        let mut sum_u = users.clone();
        let mut sum_i = items.clone();
        let mut cur_u = users.clone();
        let mut cur_i = items.clone();
        for _ in 0..layers {
            let (nu, ni) = self.step(&cur_u, &cur_i);
            sum_u.add_assign(&nu)?;
            sum_i.add_assign(&ni)?;
            cur_u = nu;
            cur_i = ni;
        }
        let scale = 1.0 / (layers + 1) as f64;
        Ok((sum_u.scale(scale), sum_i.scale(scale)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_layers_is_identity() {
        let g = BipartiteGraph::from_train(&[vec![0, 1], vec![1]], 3).unwrap();
        let u = Mat::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let v = Mat::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]).unwrap();
        let (pu, pv) = g.propagate(&u, &v, 0).unwrap();
        assert_eq!(pu, u);
        assert_eq!(pv, v);
    }

    #[test]
    fn single_edge_hand_aggregation() {
        // one user linked to one item, both degree 1: layer-1 user embedding
        // equals the item's initial embedding; final = mean of layers 0 and 1.
        let g = BipartiteGraph::from_train(&[vec![0]], 1).unwrap();
        let u = Mat::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let v = Mat::from_rows(&[vec![0.0, 4.0]]).unwrap();
        let (pu, pv) = g.propagate(&u, &v, 1).unwrap();
        assert_eq!(pu.row(0), &[1.0, 2.0]);
        assert_eq!(pv.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn isolated_nodes_pass_through() {
        // user 1 and item 2 have no edges and keep their embeddings
        let g = BipartiteGraph::from_train(&[vec![0], vec![]], 3).unwrap();
        let u = Mat::from_rows(&[vec![1.0], vec![7.0]]).unwrap();
        let v = Mat::from_rows(&[vec![2.0], vec![3.0], vec![5.0]]).unwrap();
        let (pu, pv) = g.propagate(&u, &v, 3).unwrap();
        assert_eq!(pu.get(1, 0), 7.0);
        assert_eq!(pv.get(2, 0), 5.0);
        assert!(pv.get(1, 0) == 3.0, "isolated item 1 unchanged");
    }

    #[test]
    fn disconnected_components_independent() {
        let base = vec![vec![0], vec![1]];
        let g = BipartiteGraph::from_train(&base, 2).unwrap();
        let v = Mat::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let u1 = Mat::from_rows(&[vec![1.0], vec![5.0]]).unwrap();
        let u2 = Mat::from_rows(&[vec![1.0], vec![-9.0]]).unwrap();
        let (p1, _) = g.propagate(&u1, &v, 2).unwrap();
        let (p2, _) = g.propagate(&u2, &v, 2).unwrap();
        // user 0's component does not see user 1's initial value
        assert_eq!(p1.row(0), p2.row(0));
    }

    #[test]
    fn permutation_equivariant() {
        // relabeling users/items permutes output rows identically
        let train = vec![vec![0, 1], vec![1, 2], vec![2]];
        let g = BipartiteGraph::from_train(&train, 3).unwrap();
        let u = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let v = Mat::from_rows(&[vec![0.5, 0.0], vec![0.0, 0.5], vec![0.5, 0.5]]).unwrap();
        let (pu, pv) = g.propagate(&u, &v, 2).unwrap();

        // swap users 0<->2 and items 0<->1
        let perm_train = vec![vec![2], vec![0, 2], vec![1, 0]];
        let pg = BipartiteGraph::from_train(&perm_train, 3).unwrap();
        let up = u.select_rows(&[2, 1, 0]);
        let vp = v.select_rows(&[1, 0, 2]);
        let (qu, qv) = pg.propagate(&up, &vp, 2).unwrap();
        for (a, b) in [(0usize, 2usize), (1, 1), (2, 0)] {
            assert_eq!(qu.row(a), pu.row(b));
        }
        for (a, b) in [(0usize, 1usize), (1, 0), (2, 2)] {
            assert_eq!(qv.row(a), pv.row(b));
        }
    }

    #[test]
    fn propagation_is_self_adjoint() {
        // <P(x), y> == <x, P(y)> over the stacked (user, item) space; this is
        // the property the backward pass relies on.
        let g = BipartiteGraph::from_train(&[vec![0, 1], vec![1], vec![]], 3).unwrap();
        let mk = |s: u64| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            let u = Mat::from_vec(3, 2, (0..6).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
            let v = Mat::from_vec(3, 2, (0..6).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
            (u, v)
        };
        let (xu, xv) = mk(1);
        let (yu, yv) = mk(2);
        let (pxu, pxv) = g.propagate(&xu, &xv, 3).unwrap();
        let (pyu, pyv) = g.propagate(&yu, &yv, 3).unwrap();
        let inner = |a: &Mat, b: &Mat| -> f64 {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        let lhs = inner(&pxu, &yu) + inner(&pxv, &yv);
        let rhs = inner(&xu, &pyu) + inner(&xv, &pyv);
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
