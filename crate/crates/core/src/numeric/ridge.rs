use crate::{Error, Result};

use super::Mat;

/// Solve the ridge normal equations `(X^T X + alpha I) W = X^T Y` for `W`.
///
/// Uses a Cholesky factorization of the normal matrix, which is symmetric
/// positive definite whenever `alpha > 0`. With `alpha = 0` a singular
/// `X^T X` is reported as [`Error::Singular`] rather than returning garbage.
pub fn ridge_solve(x: &Mat, y: &Mat, alpha: f64) -> Result<Mat> {
    if x.rows() != y.rows() {
        return Err(Error::shape(
            "ridge_solve",
            format!("X rows = Y rows ({})", x.rows()),
            format!("{}", y.rows()),
        ));
    }
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::InvalidArg(format!(
            "ridge alpha must be finite and >= 0, got {alpha}"
        )));
    }
    let d = x.cols();
    let mut normal = x.matmul_tn(x)?;
    for i in 0..d {
        let v = normal.get(i, i) + alpha;
        normal.set(i, i, v);
    }
    let rhs = x.matmul_tn(y)?;
    let chol = cholesky(&normal)?;
    let mut w = Mat::zeros(d, y.cols());
    let mut col = vec![0.0; d];
    for c in 0..y.cols() {
        for r in 0..d {
            col[r] = rhs.get(r, c);
        }
        cholesky_solve(&chol, &mut col);
        for r in 0..d {
            w.set(r, c, col[r]);
        }
    }
    if !w.is_finite() {
        return Err(Error::NonFinite("ridge_solve produced non-finite W".into()));
    }
    Ok(w)
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Singular(format!(
                        "normal matrix is not positive definite (pivot {s:.3e} at {i})"
                    )));
                }
                l.set(i, j, s.sqrt());
            } else {
                l.set(i, j, s / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` in place.
fn cholesky_solve(l: &Mat, b: &mut [f64]) {
    let n = l.rows();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l.get(i, k) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l.get(k, i) * b[k];
        }
        b[i] = s / l.get(i, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_case() {
        // X = I2, Y = 2 I2, alpha = 1: (I + I) W = 2 I, so W = I.
        let x = Mat::identity(2);
        let y = Mat::identity(2).scale(2.0);
        let w = ridge_solve(&x, &y, 1.0).unwrap();
        assert!(w.sub(&Mat::identity(2)).unwrap().frob_norm() < 1e-12);
    }

    #[test]
    fn zero_alpha_reproduces_targets() {
        let x = Mat::from_vec(2, 2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let y = Mat::from_vec(2, 2, vec![1.0, 0.0, -2.0, 4.0]).unwrap();
        let w = ridge_solve(&x, &y, 0.0).unwrap();
        let xw = x.matmul(&w).unwrap();
        assert!(xw.sub(&y).unwrap().frob_norm() < 1e-9);
    }

    #[test]
    fn huge_alpha_shrinks_to_zero() {
        let x = Mat::identity(3);
        let y = Mat::identity(3);
        let w = ridge_solve(&x, &y, 1e12).unwrap();
        assert!(w.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn singular_at_zero_alpha() {
        // rank-1 design
        let x = Mat::from_vec(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        let y = Mat::identity(2);
        match ridge_solve(&x, &y, 0.0) {
            Err(Error::Singular(_)) => {}
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch() {
        let x = Mat::zeros(3, 2);
        let y = Mat::zeros(4, 2);
        assert!(ridge_solve(&x, &y, 1.0).is_err());
    }
}
