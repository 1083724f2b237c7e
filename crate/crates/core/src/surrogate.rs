//! Polynomial response surfaces over active variables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::activesub::{active_coordinates, SubspaceResult};
use crate::error::{Error, Result};
use crate::models::{evaluate_all, QoiModel};
use crate::sampling::{derive_seed, lhs, ParameterSpace};

pub const DEFAULT_TRAIN: usize = 500;
pub const DEFAULT_TEST: usize = 500;
pub const ORDERS: [usize; 3] = [1, 2, 3];
const RSS_FLOOR: f64 = 1e-30;

/// `C(n + d, d)`.
pub fn n_terms(n: usize, d: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=d as u128 {
        c = c * (n as u128 + i) / i;
    }
    c as usize
}

/// Exponent tuples of all monomials of total degree `<= d`: constant first,
/// then by degree, lexicographically descending within a degree
/// (`y1^2, y1 y2, y2^2`).
pub fn exponents(n: usize, d: usize) -> Vec<Vec<u32>> {
    fn fill(n: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == n - 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e);
            fill(n, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::with_capacity(n_terms(n, d));
    for deg in 0..=d as u32 {
        if n == 0 {
            if deg == 0 {
                out.push(Vec::new());
            }
            continue;
        }
        fill(n, deg, &mut Vec::with_capacity(n), &mut out);
    }
    out
}

pub fn monomial_basis(y: &[f64], d: usize) -> Vec<f64> {
    exponents(y.len(), d)
        .iter()
        .map(|e| e.iter().zip(y).map(|(&p, v)| v.powi(p as i32)).product())
        .collect()
}

/// Affine map of active variables to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ys: &[Vec<f64>]) -> Self {
        let n = ys.first().map_or(0, |y| y.len());
        let count = ys.len().max(1) as f64;
        let mean: Vec<f64> = (0..n).map(|j| ys.iter().map(|y| y[j]).sum::<f64>() / count).collect();
        let scale = (0..n)
            .map(|j| {
                let var = ys.iter().map(|y| (y[j] - mean[j]).powi(2)).sum::<f64>() / count;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }
}

/// Fitted polynomial in standardized active variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFit {
    pub order: usize,
    pub coefficients: Vec<f64>,
    pub standardizer: Standardizer,
    pub train_rss: f64,
}

impl PolynomialFit {
    pub fn predict(&self, y: &[f64]) -> f64 {
        monomial_basis(&self.standardizer.apply(y), self.order)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, c)| b * c)
            .sum()
    }

    pub fn rss(&self, ys: &[Vec<f64>], q: &[f64]) -> f64 {
        ys.iter().zip(q).map(|(y, q)| (q - self.predict(y)).powi(2)).sum()
    }
}

/// Minimum-norm least squares on the monomial basis of degree `d`.
pub fn fit_polynomial(ys: &[Vec<f64>], q: &[f64], d: usize) -> Result<PolynomialFit> {
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidArgument(format!("polynomial order {d} out of 1..=3")));
    }
    if ys.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: ys.len(), got: q.len() });
    }
    let n = ys.first().map_or(0, |y| y.len());
    let k = n_terms(n, d);
    if ys.len() < k {
        return Err(Error::UnderDetermined { points: ys.len(), coefficients: k });
    }
    let standardizer = Standardizer::fit(ys);
    let mut a = DMatrix::<f64>::zeros(ys.len(), k);
    for (r, y) in ys.iter().enumerate() {
        for (c, v) in monomial_basis(&standardizer.apply(y), d).into_iter().enumerate() {
            a[(r, c)] = v;
        }
    }
    let b = DVector::from_column_slice(q);
    let svd = a.svd(true, true);
    let tol = f64::EPSILON * ys.len().max(k) as f64 * svd.singular_values.max();
    let coef = svd.solve(&b, tol).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut fit = PolynomialFit { order: d, coefficients: coef.iter().copied().collect(), standardizer, train_rss: 0.0 };
    fit.train_rss = fit.rss(ys, q);
    Ok(fit)
}

/// `N ln(rss / N) + 2k`, with `rss` floored at `1e-30`.
pub fn aic(rss: f64, n_params: usize, n_points: usize) -> Result<f64> {
    if n_points <= n_params {
        return Err(Error::InvalidAic { points: n_points, params: n_params });
    }
    let n = n_points as f64;
    Ok(n * (rss.max(RSS_FLOOR) / n).ln() + 2.0 * n_params as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AicSource {
    #[default]
    Test,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubspaceSource {
    Global,
    Local,
}

impl SubspaceSource {
    pub fn label(self) -> &'static str {
        match self {
            SubspaceSource::Global => "global",
            SubspaceSource::Local => "local",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    pub source: SubspaceSource,
    pub n: usize,
    pub fit: PolynomialFit,
    /// Leading eigenvectors used for projection.
    pub w1: DMatrix<f64>,
    /// Box whose unit scaling the eigenvectors refer to.
    pub space: ParameterSpace,
    pub train_rss: f64,
    pub test_rss: f64,
    pub aic: f64,
}

impl SurrogateModel {
    pub fn order(&self) -> usize {
        self.fit.order
    }

    pub fn n_coeffs(&self) -> usize {
        self.fit.coefficients.len()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        active_coordinates(&self.space.to_unit(x), &self.w1)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.fit.predict(&self.project(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSettings {
    pub train: usize,
    pub test: usize,
    pub aic_source: AicSource,
}

impl Default for SurrogateSettings {
    fn default() -> Self {
        SurrogateSettings { train: DEFAULT_TRAIN, test: DEFAULT_TEST, aic_source: AicSource::Test }
    }
}

/// Training and testing designs on `region` with their QoI values.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateData {
    pub train_x: Vec<Vec<f64>>,
    pub train_q: Vec<f64>,
    pub test_x: Vec<Vec<f64>>,
    pub test_q: Vec<f64>,
}

impl SurrogateData {
    pub fn generate(model: &dyn QoiModel, region: &ParameterSpace, settings: &SurrogateSettings, seed: u64) -> Result<Self> {
        let train_x = lhs(settings.train, region, derive_seed(seed, 0));
        let test_x = lhs(settings.test, region, derive_seed(seed, 1));
        let mut sorted: Vec<&Vec<f64>> = train_x.iter().collect();
        sorted.sort_by(|a, b| a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
        for x in &test_x {
            if sorted.binary_search_by(|p| p.iter().zip(x).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)).is_ok() {
                return Err(Error::InvalidArgument("training and testing designs share a point".into()));
            }
        }
        let train_q = evaluate_all(model, &train_x)?;
        let test_q = evaluate_all(model, &test_x)?;
        Ok(SurrogateData { train_x, train_q, test_x, test_q })
    }
}

/// Every candidate order plus the AIC minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best: SurrogateModel,
    pub candidates: Vec<Result<SurrogateModel>>,
}

/// Fits orders 1 to 3 on the projected training data and keeps the one with
/// the smallest AIC.
pub fn build_and_select(
    data: &SurrogateData,
    space: &ParameterSpace,
    subspace: &SubspaceResult,
    source: SubspaceSource,
    n: usize,
    aic_source: AicSource,
) -> Result<Selection> {
    let w1 = subspace.leading(n)?;
    let ytrain: Vec<Vec<f64>> = data.train_x.iter().map(|x| active_coordinates(&space.to_unit(x), &w1)).collect();
    let ytest: Vec<Vec<f64>> = data.test_x.iter().map(|x| active_coordinates(&space.to_unit(x), &w1)).collect();
    let candidates: Vec<Result<SurrogateModel>> = ORDERS
        .iter()
        .map(|&d| {
            let fit = fit_polynomial(&ytrain, &data.train_q, d)?;
            let test_rss = fit.rss(&ytest, &data.test_q);
            let k = fit.coefficients.len();
            let aic = match aic_source {
                AicSource::Test => aic(test_rss, k, ytest.len())?,
                AicSource::Train => aic(fit.train_rss, k, ytrain.len())?,
            };
            Ok(SurrogateModel {
                source,
                n,
                train_rss: fit.train_rss,
                fit,
                w1: w1.clone(),
                space: space.clone(),
                test_rss,
                aic,
            })
        })
        .collect();
    let best = candidates
        .iter()
        .filter_map(|c| c.as_ref().ok())
        .min_by(|a, b| a.aic.total_cmp(&b.aic))
        .cloned()
        .ok_or(Error::NoCandidate)?;
    Ok(Selection { best, candidates })
}

/// Selected surrogate for one (source, n) pair with its test predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub selection: Selection,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub rmse: f64,
}

impl Comparison {
    pub fn source(&self) -> SubspaceSource {
        self.selection.best.source
    }

    pub fn n(&self) -> usize {
        self.selection.best.n
    }
}

/// Global and local surrogates for each `n` in `dims`, trained and tested on
/// the same designs. Output is ordered by `n`, global before local.
pub fn compare_global_local(
    data: &SurrogateData,
    space: &ParameterSpace,
    global: &SubspaceResult,
    local: &SubspaceResult,
    dims: &[usize],
    aic_source: AicSource,
) -> Result<Vec<Comparison>> {
    let m = space.dim();
    let mut out = Vec::with_capacity(2 * dims.len());
    for &n in dims {
        if n == 0 || n >= m.max(2) {
            return Err(Error::InvalidArgument(format!("surrogate dimension {n} out of 1..{m}")));
        }
        for (source, sub) in [(SubspaceSource::Global, global), (SubspaceSource::Local, local)] {
            let selection = build_and_select(data, space, sub, source, n, aic_source)?;
            let predicted: Vec<f64> = data.test_x.iter().map(|x| selection.best.predict(x)).collect();
            let rmse = (predicted.iter().zip(&data.test_q).map(|(p, q)| (p - q).powi(2)).sum::<f64>()
                / predicted.len().max(1) as f64)
                .sqrt();
            out.push(Comparison { selection, actual: data.test_q.clone(), predicted, rmse });
        }
    }
    Ok(out)
}
