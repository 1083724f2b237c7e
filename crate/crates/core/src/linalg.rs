//! Cyclic Jacobi eigensolver for small dense symmetric matrices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const JACOBI_TOL: f64 = 1e-14;
pub const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Eigenvalues (descending) and matching orthonormal eigenvectors (columns).
///
/// Sweeps stop once the off-diagonal Frobenius mass drops below
/// `tol * ||A||_F`.
pub fn symmetric_eigen(a: &DMatrix<f64>, tol: f64, max_sweeps: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.ncols() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let mut m = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let threshold = tol * a.norm();
    let mut converged = off_diagonal_norm(&m) <= threshold;
    let mut sweeps = 0;
    while !converged && sweeps < max_sweeps {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&m) <= threshold;
    }
    if !converged {
        return Err(Error::NoConvergence { sweeps });
    }
    let mut order: Vec<usize> = (0..n).collect();
    // descending, ties by original position
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn symmetric_spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    let (values, _) = symmetric_eigen(a, JACOBI_TOL, JACOBI_MAX_SWEEPS)?;
    Ok(values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn diagonal_input_is_already_converged() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = symmetric_eigen(&a, JACOBI_TOL, JACOBI_MAX_SWEEPS).unwrap();
        assert_eq!(vals, vec![3.0, 1.0]);
        assert_eq!(vecs[(1, 0)].abs(), 1.0);
        assert_eq!(vecs[(0, 1)].abs(), 1.0);
    }

    #[test]
    fn agrees_with_nalgebra_on_random_symmetric_matrices() {
        let mut rng = crate::sampling::rng_from_seed(3);
        for n in 1..=8 {
            let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let a = &b + b.transpose();
            let (vals, vecs) = symmetric_eigen(&a, JACOBI_TOL, JACOBI_MAX_SWEEPS).unwrap();
            let mut reference: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            reference.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in vals.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-12, "{vals:?} vs {reference:?}");
            }
            let recon = &vecs * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vals)) * vecs.transpose();
            assert!((recon - &a).norm() < 1e-12);
            assert!((vecs.transpose() * &vecs - DMatrix::identity(n, n)).amax() < 1e-13);
        }
    }

    #[test]
    fn zero_matrix() {
        let (vals, vecs) = symmetric_eigen(&DMatrix::zeros(3, 3), JACOBI_TOL, 5).unwrap();
        assert_eq!(vals, vec![0.0; 3]);
        assert_eq!(vecs, DMatrix::identity(3, 3));
    }

    #[test]
    fn non_square_and_non_finite_inputs_are_rejected() {
        assert!(symmetric_eigen(&DMatrix::zeros(2, 3), JACOBI_TOL, 5).is_err());
        let a = DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(symmetric_eigen(&a, JACOBI_TOL, 5).is_err());
    }

    #[test]
    fn sweep_cap_is_reported() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 1.0]);
        assert_eq!(symmetric_eigen(&a, 0.0, 1), Err(Error::NoConvergence { sweeps: 1 }));
    }
}
