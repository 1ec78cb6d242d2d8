use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

use super::Mat;

/// Output of Lloyd's algorithm with k-means++ seeding.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Mat,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub objective: f64,
    /// Objective after each Lloyd iteration, non-increasing.
    pub objectives: Vec<f64>,
}

/// K-means with k-means++ seeding and Lloyd iterations.
///
/// Terminates when assignments stop changing or after `max_iters`. An empty
/// cluster is re-seeded to the point farthest from its assigned centroid.
pub fn kmeans(points: &Mat, j: usize, max_iters: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.rows();
    if j == 0 {
        return Err(Error::InvalidArg("kmeans requires J >= 1".into()));
    }
    if n < j {
        return Err(Error::InvalidArg(format!(
            "kmeans requires n >= J, got n={n}, J={j}"
        )));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("kmeans input contains non-finite values".into()));
    }
    let d = points.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(points, j, &mut rng);

    let mut assignments = vec![0usize; n];
    let mut objectives = Vec::new();
    for _ in 0..max_iters.max(1) {
        // assignment step
        let mut changed = false;
        let mut objective = 0.0;
        for p in 0..n {
            let (best, dist) = nearest(points.row(p), &centroids);
            if assignments[p] != best {
                assignments[p] = best;
                changed = true;
            }
            objective += dist;
        }
        objectives.push(objective);
        if !changed && objectives.len() > 1 {
            break;
        }
        // update step
        let mut sums = Mat::zeros(j, d);
        let mut counts = vec![0usize; j];
        for p in 0..n {
            let c = assignments[p];
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(p)) {
                *s += v;
            }
        }
        for c in 0..j {
            if counts[c] > 0 {
                for s in sums.row_mut(c) {
                    *s /= counts[c] as f64;
                }
                centroids.row_mut(c).copy_from_slice(sums.row(c));
            } else {
                // deterministic re-seed: point farthest from its current centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.row(a), centroids.row(assignments[a]));
                        let db = sq_dist(points.row(b), centroids.row(assignments[b]));
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                centroids.row_mut(c).copy_from_slice(points.row(far));
            }
        }
    }
    // final assignment so the result is a fixed point of reassignment
    let mut objective = 0.0;
    for p in 0..n {
        let (best, dist) = nearest(points.row(p), &centroids);
        assignments[p] = best;
        objective += dist;
    }
    Ok(KMeansResult {
        centroids,
        assignments,
        objective,
        objectives,
    })
}

fn seed_plus_plus(points: &Mat, j: usize, rng: &mut ChaCha8Rng) -> Mat {
    let n = points.rows();
    let d = points.cols();
    let mut centroids = Mat::zeros(j, d);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut dists: Vec<f64> = (0..n)
        .map(|p| sq_dist(points.row(p), centroids.row(0)))
        .collect();
    for c in 1..j {
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (p, &w) in dists.iter().enumerate() {
                if target < w {
                    idx = p;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for p in 0..n {
            let nd = sq_dist(points.row(p), centroids.row(c));
            if nd < dists[p] {
                dists[p] = nd;
            }
        }
    }
    centroids
}

fn nearest(point: &[f64], centroids: &Mat) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
