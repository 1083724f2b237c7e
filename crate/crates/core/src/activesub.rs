//! Active-subspace estimation from sampled gradients.
//!
//! `C = E[grad f grad f^T]` is estimated by the sample average of gradient
//! outer products, decomposed as `C = W diag(lambda) W^T`, and split into the
//! leading `n` eigenvectors `W1` (active) and the rest `W2` (inactive).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::GradientSample;
use crate::linalg::{symmetric_eigen, symmetric_spectral_norm, JACOBI_MAX_SWEEPS, JACOBI_TOL};
use crate::ranking::rank_descending;

/// Relative level below which small negative eigenvalues are treated as zero.
pub const PSD_TOL: f64 = 1e-10;

/// Spectral floor used by the eigenvalue-gap heuristic.
const GAP_FLOOR: f64 = 1e-14;

/// Sample estimate of the gradient outer-product matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub entries: DMatrix<f64>,
    /// Number of gradients averaged.
    pub samples: usize,
}

impl CMatrix {
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }
}

/// `C_hat = (1/M) sum g g^T`, symmetrized explicitly.
pub fn estimate_c(samples: &[GradientSample]) -> Result<CMatrix> {
    let grads: Vec<&[f64]> = samples.iter().map(|s| s.g.as_slice()).collect();
    estimate_c_from_gradients(&grads)
}

pub fn estimate_c_from_gradients<G: AsRef<[f64]>>(gradients: &[G]) -> Result<CMatrix> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::InvalidArgument("at least one gradient sample is required".into()))?;
    let m = first.as_ref().len();
    let mut c = DMatrix::<f64>::zeros(m, m);
    for g in gradients {
        let g = g.as_ref();
        if g.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: g.len() });
        }
        for i in 0..m {
            for j in 0..m {
                c[(i, j)] += g[i] * g[j];
            }
        }
    }
    c /= gradients.len() as f64;
    let sym = (&c + c.transpose()) * 0.5;
    Ok(CMatrix { entries: sym, samples: gradients.len() })
}

/// Eigendecomposition with an active/inactive split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SubspaceJson", try_from = "SubspaceJson")]
pub struct SubspaceResult {
    /// Descending, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    /// Active dimension.
    pub n: usize,
}

/// Serialized form: eigenvectors row-major, so `eigenvectors[i][j]` is
/// component `i` of eigenvector `j`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceJson {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub n: usize,
}

impl From<SubspaceResult> for SubspaceJson {
    fn from(s: SubspaceResult) -> Self {
        let m = s.dim();
        SubspaceJson {
            eigenvectors: (0..m).map(|i| (0..m).map(|j| s.eigenvectors[(i, j)]).collect()).collect(),
            eigenvalues: s.eigenvalues,
            n: s.n,
        }
    }
}

impl TryFrom<SubspaceJson> for SubspaceResult {
    type Error = Error;

    fn try_from(j: SubspaceJson) -> Result<Self> {
        let m = j.eigenvalues.len();
        if j.eigenvectors.len() != m || j.eigenvectors.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("eigenvector matrix must be m x m".into()));
        }
        if j.n == 0 || j.n > m {
            return Err(Error::InvalidArgument(format!("active dimension {} out of 1..={m}", j.n)));
        }
        let eigenvectors = DMatrix::from_fn(m, m, |r, c| j.eigenvectors[r][c]);
        Ok(SubspaceResult { eigenvalues: j.eigenvalues, eigenvectors, n: j.n })
    }
}

impl SubspaceResult {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Leading `n` eigenvectors.
    pub fn w1(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.n).into_owned()
    }

    /// Remaining `m - n` eigenvectors.
    pub fn w2(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(self.n, self.dim() - self.n).into_owned()
    }

    /// First `n` eigenvectors regardless of the stored split.
    pub fn leading(&self, n: usize) -> Result<DMatrix<f64>> {
        if n == 0 || n > self.dim() {
            return Err(Error::InvalidArgument(format!("active dimension {n} out of 1..={}", self.dim())));
        }
        Ok(self.eigenvectors.columns(0, n).into_owned())
    }

    pub fn with_dimension(mut self, n: usize) -> Result<Self> {
        if n == 0 || n > self.dim() {
            return Err(Error::InvalidArgument(format!("active dimension {n} out of 1..={}", self.dim())));
        }
        self.n = n;
        Ok(self)
    }

    pub fn with_auto_dimension(self) -> Result<Self> {
        let n = select_dimension(&self.eigenvalues)?;
        self.with_dimension(n)
    }
}

/// Flips `v` so that its largest-magnitude component is positive; among
/// components equal in magnitude up to rounding the first one decides.
fn canonical_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if max == 0.0 {
        return;
    }
    let lead = v
        .iter()
        .position(|x| x.abs() >= max * (1.0 - 1e-12))
        .expect("max is attained");
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Full spectral decomposition of `C_hat`; the returned split has `n = m`.
pub fn eigendecompose(c: &CMatrix) -> Result<SubspaceResult> {
    let (mut values, mut vectors) = symmetric_eigen(&c.entries, JACOBI_TOL, JACOBI_MAX_SWEEPS)?;
    let m = values.len();
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v >= -PSD_TOL * top {
                *v = 0.0;
            } else {
                return Err(Error::InvalidArgument(format!(
                    "matrix is not positive semidefinite (eigenvalue {v:e}, largest {top:e})"
                )));
            }
        }
    }
    for j in 0..m {
        let mut col: Vec<f64> = vectors.column(j).iter().copied().collect();
        canonical_sign(&mut col);
        vectors.set_column(j, &DVector::from_vec(col));
    }
    Ok(SubspaceResult { eigenvalues: values, eigenvectors: vectors, n: m })
}

/// Active dimension at the largest gap of `log10(lambda_j / lambda_{j+1})`.
pub fn select_dimension(eigenvalues: &[f64]) -> Result<usize> {
    let top = eigenvalues.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    if eigenvalues.len() == 1 {
        return Ok(1);
    }
    let floor = GAP_FLOOR * top;
    let mut best = (1, f64::NEG_INFINITY);
    for j in 0..eigenvalues.len() - 1 {
        let gap = (eigenvalues[j].max(floor) / eigenvalues[j + 1].max(floor)).log10();
        if gap > best.1 {
            best = (j + 1, gap);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityScores {
    pub raw: Vec<f64>,
    /// `raw / max(raw)`.
    pub normalized: Vec<f64>,
    /// Parameter indices, most influential first.
    pub ranking: Vec<usize>,
}

/// `alpha_i = sum_j lambda_j w_ij^2` over all `m` eigenpairs.
pub fn activity_scores(sub: &SubspaceResult) -> ActivityScores {
    let m = sub.dim();
    let raw: Vec<f64> = (0..m)
        .map(|i| (0..m).map(|j| sub.eigenvalues[j] * sub.eigenvectors[(i, j)].powi(2)).sum())
        .collect();
    let max = raw.iter().fold(0.0f64, |a, &b| a.max(b));
    let normalized = raw.iter().map(|v| if max > 0.0 { v / max } else { 0.0 }).collect();
    let ranking = rank_descending(&raw);
    ActivityScores { raw, normalized, ranking }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceNorm {
    /// Operator 2-norm: the sine of the largest principal angle, in `[0, 1]`.
    #[default]
    Spectral,
    Frobenius,
}

const ORTHONORMAL_TOL: f64 = 1e-8;

fn check_orthonormal(w: &DMatrix<f64>) -> Result<()> {
    let dev = (w.transpose() * w - DMatrix::<f64>::identity(w.ncols(), w.ncols())).amax();
    if dev > ORTHONORMAL_TOL {
        Err(Error::NotOrthonormal(dev))
    } else {
        Ok(())
    }
}

/// `|| A A^T - B B^T ||_2` for two orthonormal bases of equal shape.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    subspace_distance_with(a, b, DistanceNorm::Spectral)
}

pub fn subspace_distance_with(a: &DMatrix<f64>, b: &DMatrix<f64>, norm: DistanceNorm) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!(
            "basis shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    check_orthonormal(a)?;
    check_orthonormal(b)?;
    let diff = a * a.transpose() - b * b.transpose();
    Ok(match norm {
        DistanceNorm::Spectral => symmetric_spectral_norm(&diff)?.clamp(0.0, 1.0),
        DistanceNorm::Frobenius => diff.norm(),
    })
}

/// Active and inactive coordinates of a point.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveVars {
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl ActiveVars {
    /// `W1 y + W2 z`.
    pub fn reconstruct(&self, sub: &SubspaceResult) -> Vec<f64> {
        let y = DVector::from_column_slice(&self.y);
        let z = DVector::from_column_slice(&self.z);
        let x = sub.w1() * y + sub.w2() * z;
        x.iter().copied().collect()
    }
}

/// `y = W1^T x`, `z = W2^T x`.
pub fn project(x: &[f64], sub: &SubspaceResult) -> Result<ActiveVars> {
    if x.len() != sub.dim() {
        return Err(Error::DimensionMismatch { expected: sub.dim(), got: x.len() });
    }
    let xv = DVector::from_column_slice(x);
    let y = sub.w1().transpose() * &xv;
    let z = sub.w2().transpose() * &xv;
    Ok(ActiveVars { y: y.iter().copied().collect(), z: z.iter().copied().collect() })
}

/// Active coordinates `W1^T x` only.
pub fn active_coordinates(x: &[f64], w1: &DMatrix<f64>) -> Vec<f64> {
    (0..w1.ncols())
        .map(|j| (0..w1.nrows()).map(|i| w1[(i, j)] * x[i]).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::{gradient_batch, GradientConfig};
    use crate::models::{QoiModel, TestFunction};
    use crate::sampling::{lhs, rng_from_seed, ParameterSpace};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn c_from(rows: &[&[f64]]) -> CMatrix {
        let m = rows.len();
        CMatrix { entries: DMatrix::from_fn(m, m, |i, j| rows[i][j]), samples: 1 }
    }

    fn random_psd(rng: &mut impl Rng, m: usize, rank: usize) -> CMatrix {
        let grads: Vec<Vec<f64>> =
            (0..rank).map(|_| (0..m).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        estimate_c_from_gradients(&grads).unwrap()
    }

    /// sin of the largest principal angle from the SVD of `A^T B`.
    fn principal_angle_oracle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let svd = (a.transpose() * b).svd(false, false);
        let smin = svd.singular_values.iter().fold(f64::INFINITY, |acc, v| acc.min(*v)).min(1.0);
        (1.0 - smin * smin).max(0.0).sqrt()
    }

    fn random_orthonormal(rng: &mut impl Rng, m: usize, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        a.qr().q()
    }

    #[test]
    fn outer_product_examples() {
        let c = estimate_c_from_gradients(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(c.entries, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let c = estimate_c_from_gradients(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(c.entries, DMatrix::identity(2, 2) * 0.5);
        assert!(matches!(
            estimate_c_from_gradients(&[vec![1.0, 0.0], vec![1.0]]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(estimate_c_from_gradients::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn constant_direction_gives_rank_one() {
        let grads: Vec<Vec<f64>> = [0.3, 1.0, 2.5].iter().map(|c| vec![0.7 * c, 0.3 * c]).collect();
        let sub = eigendecompose(&estimate_c_from_gradients(&grads).unwrap()).unwrap();
        assert!(sub.eigenvalues[1] <= 1e-14 * sub.eigenvalues[0]);
        let norm = (0.49f64 + 0.09).sqrt();
        assert_relative_eq!(sub.eigenvectors[(0, 0)], 0.7 / norm, epsilon = 1e-12);
        assert_relative_eq!(sub.eigenvectors[(1, 0)], 0.3 / norm, epsilon = 1e-12);
    }

    #[test]
    fn eigendecomposition_examples() {
        let sub = eigendecompose(&c_from(&[&[3.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(sub.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(sub.eigenvectors, DMatrix::identity(2, 2));

        let sub = eigendecompose(&c_from(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert_relative_eq!(sub.eigenvalues[0], 3.0, epsilon = 1e-14);
        assert_relative_eq!(sub.eigenvalues[1], 1.0, epsilon = 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_relative_eq!(sub.eigenvectors[(0, 0)], r, epsilon = 1e-14);
        assert_relative_eq!(sub.eigenvectors[(1, 0)], r, epsilon = 1e-14);
        assert_relative_eq!(sub.eigenvectors[(0, 1)], r, epsilon = 1e-14);
        assert_relative_eq!(sub.eigenvectors[(1, 1)], -r, epsilon = 1e-14);
    }

    #[test]
    fn reconstruction_and_orthonormality_on_random_psd() {
        let mut rng = rng_from_seed(10);
        for trial in 0..100 {
            let m = 2 + trial % 6;
            let c = random_psd(&mut rng, m, 1 + trial % 9);
            let sub = eigendecompose(&c).unwrap();
            let lam = DMatrix::from_diagonal(&DVector::from_vec(sub.eigenvalues.clone()));
            let recon = &sub.eigenvectors * lam * sub.eigenvectors.transpose();
            assert!((recon - &c.entries).norm() <= 1e-10 * sub.eigenvalues[0].max(1.0));
            let wtw = sub.eigenvectors.transpose() * &sub.eigenvectors;
            assert!((wtw - DMatrix::identity(m, m)).amax() < 1e-10);
            assert!(sub.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            assert!(sub.eigenvalues.iter().all(|v| *v >= 0.0));
            // trace identity
            let scores = activity_scores(&sub);
            let sum: f64 = scores.raw.iter().sum();
            assert!((sum - c.trace()).abs() <= 1e-8 * c.trace());
        }
    }

    #[test]
    fn gap_heuristic() {
        assert_eq!(select_dimension(&[1.0, 1e-6]).unwrap(), 1);
        assert_eq!(select_dimension(&[5.0, 4.9, 1e-3, 1e-4]).unwrap(), 2);
        assert_eq!(select_dimension(&[2.0, 0.0, 0.0]).unwrap(), 1);
        assert_eq!(select_dimension(&[0.0, 0.0]), Err(Error::DegenerateSpectrum));
    }

    #[test]
    fn activity_score_examples() {
        let sub = eigendecompose(&c_from(&[&[0.5, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 1.0]])).unwrap();
        let s = activity_scores(&sub);
        assert_relative_eq!(s.raw[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(s.raw[1], 2.0, epsilon = 1e-15);
        assert_relative_eq!(s.raw[2], 1.0, epsilon = 1e-15);
        assert_eq!(s.ranking, vec![1, 2, 0]);

        // f1: constant gradient direction [0.7, 0.3]
        let space = ParameterSpace::unit(2);
        let pts = lhs(200, &space, 1);
        let grads = gradient_batch(&TestFunction::F1, &space, &pts, &GradientConfig::analytic()).unwrap();
        let sub = eigendecompose(&estimate_c(&grads).unwrap()).unwrap();
        let s = activity_scores(&sub);
        assert_relative_eq!(s.normalized[0], 1.0);
        assert_relative_eq!(s.normalized[1], 9.0 / 49.0, epsilon = 1e-12);
        assert_eq!(s.ranking, vec![0, 1]);
    }

    #[test]
    fn scaling_the_qoi_leaves_rankings_unchanged() {
        let mut rng = rng_from_seed(12);
        let grads: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let scaled: Vec<Vec<f64>> = grads.iter().map(|g| g.iter().map(|v| 3.0 * v).collect()).collect();
        let a = activity_scores(&eigendecompose(&estimate_c_from_gradients(&grads).unwrap()).unwrap());
        let b = activity_scores(&eigendecompose(&estimate_c_from_gradients(&scaled).unwrap()).unwrap());
        assert_eq!(a.ranking, b.ranking);
        for (x, y) in a.normalized.iter().zip(&b.normalized) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn distance_examples() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let e2 = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let d = DMatrix::from_column_slice(2, 1, &[r, r]);
        assert_eq!(subspace_distance(&e1, &e1).unwrap(), 0.0);
        assert_relative_eq!(subspace_distance(&e1, &e2).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(subspace_distance(&e1, &d).unwrap(), r, epsilon = 1e-14);
        let neg = -&e1;
        assert!(subspace_distance(&e1, &neg).unwrap() < 1e-15);
    }

    #[test]
    fn distance_errors() {
        let e1 = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let two = DMatrix::<f64>::identity(2, 2);
        assert!(subspace_distance(&e1, &two).is_err());
        let long = DMatrix::from_column_slice(2, 1, &[1.0, 0.1]);
        assert!(matches!(subspace_distance(&e1, &long), Err(Error::NotOrthonormal(_))));
    }

    #[test]
    fn distance_matches_principal_angles_and_is_basis_invariant() {
        let mut rng = rng_from_seed(21);
        for trial in 0..200 {
            let m = 2 + trial % 6;
            let n = 1 + trial % (m - 1).max(1);
            let a = random_orthonormal(&mut rng, m, n);
            let b = random_orthonormal(&mut rng, m, n);
            let d = subspace_distance(&a, &b).unwrap();
            assert!((0.0..=1.0).contains(&d));
            assert!((d - principal_angle_oracle(&a, &b)).abs() < 1e-8, "m={m} n={n}");
            let q = random_orthonormal(&mut rng, n, n);
            let d2 = subspace_distance(&(&a * &q), &b).unwrap();
            assert!((d - d2).abs() < 1e-10);
            let fro = subspace_distance_with(&a, &b, DistanceNorm::Frobenius).unwrap();
            assert!(fro + 1e-12 >= d);
        }
    }

    #[test]
    fn projection_round_trip() {
        let sub = SubspaceResult {
            eigenvalues: vec![2.0, 1.0],
            eigenvectors: DMatrix::identity(2, 2),
            n: 1,
        };
        let v = project(&[3.0, 4.0], &sub).unwrap();
        assert_eq!((v.y.clone(), v.z.clone()), (vec![3.0], vec![4.0]));
        let zero = project(&[0.0, 0.0], &sub).unwrap();
        assert_eq!((zero.y, zero.z), (vec![0.0], vec![0.0]));

        let mut rng = rng_from_seed(2);
        let c = random_psd(&mut rng, 5, 5);
        let sub = eigendecompose(&c).unwrap().with_dimension(2).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let back = project(&x, &sub).unwrap().reconstruct(&sub);
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!(project(&[1.0], &sub).is_err());
    }

    #[test]
    fn f1_is_constant_along_the_inactive_direction() {
        let space = ParameterSpace::unit(2);
        let pts = lhs(100, &space, 5);
        let grads = gradient_batch(&TestFunction::F1, &space, &pts, &GradientConfig::default()).unwrap();
        let sub = eigendecompose(&estimate_c(&grads).unwrap()).unwrap().with_dimension(1).unwrap();
        let w1 = sub.w1();
        let mut rng = rng_from_seed(6);
        for _ in 0..50 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let y = active_coordinates(&x, &w1);
            let xr = [w1[(0, 0)] * y[0], w1[(1, 0)] * y[0]];
            let diff = TestFunction::F1.evaluate(&x).unwrap() - TestFunction::F1.evaluate(&xr).unwrap();
            assert!(diff.abs() < 1e-8, "{diff}");
        }
    }

    #[test]
    fn json_round_trip() {
        let mut rng = rng_from_seed(8);
        let sub = eigendecompose(&random_psd(&mut rng, 4, 4)).unwrap().with_dimension(3).unwrap();
        let text = serde_json::to_string(&sub).unwrap();
        let back: SubspaceResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sub);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["eigenvectors"][1][0].as_f64().unwrap(), sub.eigenvectors[(1, 0)]);
    }
}
