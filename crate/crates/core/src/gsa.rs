//! Morris elementary effects and Sobol' indices.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{evaluate_all, QoiModel};
use crate::ranking::rank_descending;
use crate::sampling::{derive_seed, lhs, rng_from_seed, ParameterSpace};

pub const MORRIS_TRAJECTORIES: usize = 100;
pub const MORRIS_LEVELS: usize = 8;
/// Relative inset of the Morris level grid from the box faces.
pub const MORRIS_INSET: f64 = 1e-3;
pub const SOBOL_GLOBAL_N: usize = 1 << 14;
pub const SOBOL_LOCAL_N: usize = 1 << 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorrisConfig {
    pub trajectories: usize,
    pub levels: usize,
    /// Levels span `[inset, 1 - inset]` in scaled coordinates, keeping the
    /// design off faces where a model may be undefined.
    pub inset: f64,
}

impl Default for MorrisConfig {
    fn default() -> Self {
        MorrisConfig { trajectories: MORRIS_TRAJECTORIES, levels: MORRIS_LEVELS, inset: MORRIS_INSET }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorrisResult {
    pub mu: Vec<f64>,
    pub mu_star: Vec<f64>,
    pub sigma: Vec<f64>,
    pub r: usize,
    pub p: usize,
}

impl MorrisResult {
    /// Parameters ordered by `mu_star`, largest first.
    pub fn ranking(&self) -> Vec<usize> {
        rank_descending(&self.mu_star)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolResult {
    pub first_order: Vec<f64>,
    pub total_effect: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
}

impl SobolResult {
    /// Parameters ordered by total effect, largest first.
    pub fn ranking(&self) -> Vec<usize> {
        rank_descending(&self.total_effect)
    }
}

/// Points of one trajectory in scaled coordinates, plus the axis moved at
/// each step.
fn trajectory<R: Rng>(rng: &mut R, m: usize, p: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let jump = p / 2;
    let mut level: Vec<usize> = (0..m).map(|_| rng.random_range(0..p)).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut points = Vec::with_capacity(m + 1);
    points.push(level.clone());
    for &axis in &order {
        if level[axis] + jump < p {
            level[axis] += jump;
        } else {
            level[axis] -= jump;
        }
        points.push(level.clone());
    }
    (points, order)
}

pub fn morris(model: &dyn QoiModel, space: &ParameterSpace, config: &MorrisConfig, seed: u64) -> Result<MorrisResult> {
    let (r, p, inset) = (config.trajectories, config.levels, config.inset);
    if p < 2 || p % 2 != 0 {
        return Err(Error::InvalidArgument(format!("Morris level count {p} must be even and at least 2")));
    }
    if r < 2 {
        return Err(Error::InvalidArgument(format!("Morris needs at least 2 trajectories, got {r}")));
    }
    if !(0.0..0.5).contains(&inset) {
        return Err(Error::InvalidArgument(format!("Morris inset {inset} must lie in [0, 0.5)")));
    }
    let m = space.dim();
    let span = 1.0 - 2.0 * inset;
    let to_unit = |l: usize| inset + span * l as f64 / (p - 1) as f64;

    let mut rng = rng_from_seed(seed);
    let mut levels = Vec::with_capacity(r);
    let mut orders = Vec::with_capacity(r);
    let mut points = Vec::with_capacity(r * (m + 1));
    for _ in 0..r {
        let (traj, order) = trajectory(&mut rng, m, p);
        for l in &traj {
            let u: Vec<f64> = l.iter().map(|&v| to_unit(v)).collect();
            points.push(space.from_unit(&u));
        }
        levels.push(traj);
        orders.push(order);
    }

    let values = evaluate_all(model, &points).map_err(|e| match e {
        Error::ModelEvaluation { point, reason } => {
            let i = points.iter().position(|x| *x == point).unwrap_or(0);
            Error::ModelEvaluation {
                point,
                reason: format!("trajectory {}, step {}: {reason}", i / (m + 1), i % (m + 1)),
            }
        }
        e => e,
    })?;

    let mut effects = vec![Vec::with_capacity(r); m];
    for t in 0..r {
        let f = &values[t * (m + 1)..(t + 1) * (m + 1)];
        for (step, &axis) in orders[t].iter().enumerate() {
            let before = to_unit(levels[t][step][axis]);
            let after = to_unit(levels[t][step + 1][axis]);
            effects[axis].push((f[step + 1] - f[step]) / (after - before));
        }
    }

    let mut mu = Vec::with_capacity(m);
    let mut mu_star = Vec::with_capacity(m);
    let mut sigma = Vec::with_capacity(m);
    for ee in &effects {
        let n = ee.len() as f64;
        let mean = ee.iter().sum::<f64>() / n;
        mu.push(mean);
        mu_star.push(ee.iter().map(|v| v.abs()).sum::<f64>() / n);
        let var = ee.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        sigma.push(var.sqrt());
    }
    Ok(MorrisResult { mu, mu_star, sigma, r, p })
}

/// First-order (Saltelli 2010) and total-effect (Jansen) indices from
/// `(m + 2) N` evaluations on two independent Latin hypercube designs.
pub fn sobol(model: &dyn QoiModel, space: &ParameterSpace, n: usize, seed: u64) -> Result<SobolResult> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("Sobol' base sample count {n} must be at least 2")));
    }
    let m = space.dim();
    let a = lhs(n, space, derive_seed(seed, 0));
    let b = lhs(n, space, derive_seed(seed, 1));
    let mut points = Vec::with_capacity((m + 2) * n);
    points.extend(a.iter().cloned());
    points.extend(b.iter().cloned());
    for i in 0..m {
        for (ra, rb) in a.iter().zip(&b) {
            let mut x = ra.clone();
            x[i] = rb[i];
            points.push(x);
        }
    }
    let values = evaluate_all(model, &points)?;
    let fa = &values[..n];
    let fb = &values[n..2 * n];

    let pooled = &values[..2 * n];
    let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let var = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pooled.len() as f64;
    if var <= 0.0 || pooled.iter().all(|v| *v == pooled[0]) {
        return Err(Error::ZeroVariance);
    }

    let mut first_order = Vec::with_capacity(m);
    let mut total_effect = Vec::with_capacity(m);
    for i in 0..m {
        let fab = &values[(2 + i) * n..(3 + i) * n];
        let mut vi = 0.0;
        let mut vti = 0.0;
        for j in 0..n {
            vi += fb[j] * (fab[j] - fa[j]);
            vti += (fa[j] - fab[j]).powi(2);
        }
        first_order.push(vi / n as f64 / var);
        total_effect.push(vti / (2.0 * n as f64) / var);
    }
    Ok(SobolResult { first_order, total_effect, n })
}
