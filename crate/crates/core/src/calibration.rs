//! Subset-restricted Bayesian calibration and the global-versus-local
//! subset comparison.
//!
//! Chains run on the free parameters in unit-scaled coordinates of the
//! model's admissible box, with a uniform prior over that box. Many chains
//! advance in lockstep so that their proposals can share batched model
//! evaluations; each chain owns its random stream, so results do not depend
//! on how chains are grouped.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::QoiModel;
use crate::sampling::{derive_seed, open01, rng_from_seed, ParameterSpace, RegionGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTask {
    pub region_index: u64,
    pub true_params: Vec<f64>,
    pub data_qoi: f64,
    pub k: usize,
    /// First `k` entries of the ranking used, in ranking order.
    pub free_subset: Vec<usize>,
    /// Full parameter vector with every entry at the centre of its range;
    /// free entries are overwritten during calibration.
    pub fixed_values: Vec<f64>,
    /// Admissible box; also the prior support.
    pub space: ParameterSpace,
}

impl CalibrationTask {
    /// Free parameters in ascending index order.
    pub fn free_sorted(&self) -> Vec<usize> {
        let mut f = self.free_subset.clone();
        f.sort_unstable();
        f
    }
}

/// Draws the true parameters uniformly in the region and records the
/// noiseless QoI there.
pub fn make_task(
    model: &dyn QoiModel,
    grid: &RegionGrid,
    region_index: u64,
    k: usize,
    ranking: &[usize],
    seed: u64,
) -> Result<CalibrationTask> {
    let m = grid.dim();
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("free parameter count {k} out of 1..={m}")));
    }
    if ranking.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: ranking.len() });
    }
    let bounds = grid.region_bounds(region_index)?;
    let mut rng = rng_from_seed(seed);
    let true_params: Vec<f64> = (0..m).map(|i| bounds.lower[i] + open01(&mut rng) * bounds.width(i)).collect();
    let data_qoi = model.evaluate(&true_params)?;
    Ok(CalibrationTask {
        region_index,
        true_params,
        data_qoi,
        k,
        free_subset: ranking[..k].to_vec(),
        fixed_values: grid.space.center(),
        space: grid.space.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    /// Iteration at which covariance adaptation begins.
    pub adapt_start: usize,
    pub adapt_interval: usize,
    /// Likelihood scale as a fraction of the data QoI.
    pub noise_rel: f64,
    /// Second-stage proposal scale relative to the first stage.
    pub dr_scale: f64,
    /// Added to the chain covariance (unit-scaled coordinates) before scaling.
    pub regularization: f64,
    /// Initial proposal standard deviation in unit-scaled coordinates.
    pub initial_step: f64,
    pub store_samples: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        McmcSettings {
            iterations: 5000,
            burn_in: 1000,
            adapt_start: 500,
            adapt_interval: 100,
            noise_rel: 0.01,
            dr_scale: 0.2,
            regularization: 1e-8,
            initial_step: 0.1,
            store_samples: true,
        }
    }
}

impl McmcSettings {
    fn validate(&self) -> Result<()> {
        if self.iterations < self.burn_in + self.adapt_start || self.iterations == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} iterations cannot cover {} burn-in plus {} warm-up iterations",
                self.iterations, self.burn_in, self.adapt_start
            )));
        }
        if self.adapt_interval == 0 {
            return Err(Error::InvalidArgument("adaptation interval must be positive".into()));
        }
        if !(self.noise_rel > 0.0) || !(self.dr_scale > 0.0) || !(self.initial_step > 0.0) {
            return Err(Error::InvalidArgument("likelihood and proposal scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    /// Free parameters in ascending index order; columns of `samples`.
    pub parameters: Vec<usize>,
    /// Post-burn-in states in model units (empty unless stored).
    pub samples: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub best_fit: Vec<f64>,
    /// `(QoI_data - QoI_model)^2` at `best_fit`.
    pub fit_error: f64,
    /// Proposals whose model evaluation failed.
    pub model_failures: usize,
    pub warning: Option<String>,
}

struct Chain<'a> {
    task: &'a CalibrationTask,
    free: Vec<usize>,
    k: usize,
    rng: ChaCha8Rng,
    sigma: f64,
    u: Vec<f64>,
    logp: f64,
    err: f64,
    chol: DMatrix<f64>,
    scale: f64,
    // running sums for the chain covariance
    sum: DVector<f64>,
    sum_outer: DMatrix<f64>,
    count: usize,
    accepted: usize,
    accepted_after_adapt: usize,
    failures: usize,
    best_u: Vec<f64>,
    best_err: f64,
    samples: Vec<Vec<f64>>,
    // per-iteration scratch
    z1: Vec<f64>,
    a1: f64,
    z2: Vec<f64>,
    a2: f64,
    y1: Option<Vec<f64>>,
    y2: Option<Vec<f64>>,
    lp1: f64,
}

impl<'a> Chain<'a> {
    fn new(task: &'a CalibrationTask, settings: &McmcSettings, seed: u64) -> Self {
        let free = task.free_sorted();
        let k = free.len();
        let sigma = (settings.noise_rel * task.data_qoi.abs()).max(f64::MIN_POSITIVE);
        Chain {
            task,
            k,
            rng: rng_from_seed(seed),
            sigma,
            u: free.iter().map(|&i| task.space.to_unit(&task.fixed_values)[i]).collect(),
            logp: f64::NEG_INFINITY,
            err: f64::INFINITY,
            chol: DMatrix::identity(k, k) * settings.initial_step,
            scale: 2.38 * 2.38 / k as f64,
            sum: DVector::zeros(k),
            sum_outer: DMatrix::zeros(k, k),
            count: 0,
            accepted: 0,
            accepted_after_adapt: 0,
            failures: 0,
            best_u: Vec::new(),
            best_err: f64::INFINITY,
            samples: Vec::new(),
            z1: vec![0.0; k],
            a1: 0.0,
            z2: vec![0.0; k],
            a2: 0.0,
            y1: None,
            y2: None,
            lp1: f64::NEG_INFINITY,
            free,
        }
    }

    fn point(&self, u: &[f64]) -> Vec<f64> {
        let mut x = self.task.fixed_values.clone();
        for (j, &i) in self.free.iter().enumerate() {
            x[i] = self.task.space.lower[i] + u[j] * self.task.space.width(i);
        }
        x
    }

    fn log_post(&self, q: &Result<f64>) -> (f64, f64) {
        match q {
            Ok(q) if q.is_finite() => {
                let e = (self.task.data_qoi - q).powi(2);
                (-e / (2.0 * self.sigma * self.sigma), e)
            }
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn propose(&self, z: &[f64], factor: f64) -> Option<Vec<f64>> {
        let step = &self.chol * DVector::from_column_slice(z);
        let y: Vec<f64> = self.u.iter().zip(step.iter()).map(|(u, s)| u + factor * s).collect();
        y.iter().all(|v| (0.0..=1.0).contains(v)).then_some(y)
    }

    /// Draws all randomness of one iteration up front so that paired chains
    /// consume identical streams whatever happens.
    fn draw(&mut self) {
        for v in self.z1.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        self.a1 = self.rng.random();
        for v in self.z2.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        self.a2 = self.rng.random();
        self.y1 = self.propose(&self.z1, 1.0);
        self.y2 = None;
    }

    /// First-stage decision; returns true when a second stage is needed.
    fn stage_one(&mut self, q1: Option<&Result<f64>>) -> bool {
        let (lp, e) = q1.map_or((f64::NEG_INFINITY, f64::INFINITY), |q| self.log_post(q));
        if q1.is_some_and(|q| q.is_err()) {
            self.failures += 1;
        }
        self.lp1 = lp;
        let alpha = (lp - self.logp).min(0.0).exp();
        if self.a1 < alpha {
            self.u = self.y1.take().expect("accepted proposal exists");
            self.logp = lp;
            self.err = e;
            self.accepted += 1;
            false
        } else {
            true
        }
    }

    fn log_q1(&self, from: &[f64], to: &[f64]) -> f64 {
        let d = DVector::from_iterator(self.k, from.iter().zip(to).map(|(a, b)| b - a));
        match self.chol.solve_lower_triangular(&d) {
            Some(w) => -0.5 * w.norm_squared(),
            None => f64::NEG_INFINITY,
        }
    }

    fn stage_two(&mut self, q2: Option<&Result<f64>>) {
        let Some(y2) = self.y2.take() else { return };
        let q2 = q2.expect("second-stage proposal was evaluated");
        if q2.is_err() {
            self.failures += 1;
        }
        let (lp2, e2) = self.log_post(q2);
        if lp2 == f64::NEG_INFINITY {
            return;
        }
        let alpha1_x = (self.lp1 - self.logp).min(0.0).exp();
        let alpha1_y2 = (self.lp1 - lp2).min(0.0).exp();
        if alpha1_y2 >= 1.0 {
            return;
        }
        let log_num_q = match &self.y1 {
            Some(y1) => self.log_q1(&y2, y1),
            None => {
                // out-of-range first stage: recover its position from z1
                let step = &self.chol * DVector::from_column_slice(&self.z1);
                let y1: Vec<f64> = self.u.iter().zip(step.iter()).map(|(u, s)| u + s).collect();
                self.log_q1(&y2, &y1)
            }
        };
        let log_den_q = -0.5 * self.z1.iter().map(|z| z * z).sum::<f64>();
        let log_alpha =
            lp2 - self.logp + log_num_q - log_den_q + (1.0 - alpha1_y2).ln() - (1.0 - alpha1_x).ln();
        if self.a2.ln() < log_alpha {
            self.u = y2;
            self.logp = lp2;
            self.err = e2;
            self.accepted += 1;
        }
    }

    fn record(&mut self, iter: usize, settings: &McmcSettings) {
        let u = DVector::from_column_slice(&self.u);
        self.sum += &u;
        self.sum_outer += &u * u.transpose();
        self.count += 1;
        if self.err < self.best_err {
            self.best_err = self.err;
            self.best_u = self.u.clone();
        }
        if settings.store_samples && iter >= settings.burn_in {
            self.samples.push(self.point(&self.u).iter().enumerate().filter(|(i, _)| self.free.contains(i)).map(|(_, v)| *v).collect());
        }
        let t = iter + 1;
        if t >= settings.adapt_start && t % settings.adapt_interval == 0 && self.count > 1 {
            let n = self.count as f64;
            let mean = &self.sum / n;
            let cov = (&self.sum_outer - &mean * mean.transpose() * n) / (n - 1.0);
            let reg = (cov + DMatrix::identity(self.k, self.k) * settings.regularization) * self.scale;
            let reg = (&reg + reg.transpose()) * 0.5;
            if let Some(c) = reg.cholesky() {
                self.chol = c.l();
            }
        }
    }
}

/// Runs every `(task, seed)` chain to completion, advancing them in
/// lockstep and batching their model evaluations.
pub fn run_chains(
    model: &dyn QoiModel,
    jobs: &[(&CalibrationTask, u64)],
    settings: &McmcSettings,
) -> Result<Vec<ChainResult>> {
    settings.validate()?;
    let mut chains: Vec<Chain> = jobs.iter().map(|(t, s)| Chain::new(t, settings, *s)).collect();

    // starting states
    let starts: Vec<Vec<f64>> = chains.iter().map(|c| c.point(&c.u)).collect();
    let q0 = model.evaluate_batch(&starts);
    for (c, q) in chains.iter_mut().zip(&q0) {
        let (lp, e) = c.log_post(q);
        c.logp = lp;
        c.err = e;
        if q.is_err() {
            c.failures += 1;
        }
    }

    let mut adapt_mark = vec![0usize; chains.len()];
    for iter in 0..settings.iterations {
        for c in chains.iter_mut() {
            c.draw();
        }
        let (idx1, pts1): (Vec<usize>, Vec<Vec<f64>>) = chains
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.y1.as_ref().map(|y| (i, c.point(y))))
            .unzip();
        let q1 = model.evaluate_batch(&pts1);
        let mut slot = vec![None; chains.len()];
        for (j, &i) in idx1.iter().enumerate() {
            slot[i] = Some(j);
        }
        let mut need2 = Vec::new();
        for (i, c) in chains.iter_mut().enumerate() {
            if c.stage_one(slot[i].map(|j| &q1[j])) {
                let z2 = c.z2.clone();
                c.y2 = c.propose(&z2, settings.dr_scale);
                if c.y2.is_some() {
                    need2.push(i);
                }
            }
        }
        let pts2: Vec<Vec<f64>> = need2.iter().map(|&i| chains[i].point(chains[i].y2.as_ref().unwrap())).collect();
        let q2 = model.evaluate_batch(&pts2);
        let mut slot2 = vec![None; chains.len()];
        for (j, &i) in need2.iter().enumerate() {
            slot2[i] = Some(j);
        }
        for (i, c) in chains.iter_mut().enumerate() {
            c.stage_two(slot2[i].map(|j| &q2[j]));
            c.y1 = None;
            c.record(iter, settings);
            if iter + 1 == settings.adapt_start {
                adapt_mark[i] = c.accepted;
            }
        }
    }

    Ok(chains
        .into_iter()
        .zip(adapt_mark)
        .map(|(mut c, mark)| {
            c.accepted_after_adapt = c.accepted - mark;
            let warning = (c.accepted_after_adapt == 0)
                .then(|| "no proposal accepted after adaptation started".to_string());
            let best = if c.best_u.is_empty() { c.u.clone() } else { c.best_u.clone() };
            let best_full = c.point(&best);
            ChainResult {
                best_fit: c.free.iter().map(|&i| best_full[i]).collect(),
                parameters: c.free.clone(),
                samples: std::mem::take(&mut c.samples),
                acceptance_rate: c.accepted as f64 / settings.iterations as f64,
                fit_error: c.best_err,
                model_failures: c.failures,
                warning,
            }
        })
        .collect())
}

/// Adaptive Metropolis with one delayed-rejection stage.
pub fn adaptive_metropolis(
    model: &dyn QoiModel,
    task: &CalibrationTask,
    settings: &McmcSettings,
    seed: u64,
) -> Result<ChainResult> {
    Ok(run_chains(model, &[(task, seed)], settings)?.pop().expect("one chain"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Winner {
    Global,
    Local,
    Tie,
}

impl Winner {
    pub fn label(self) -> &'static str {
        match self {
            Winner::Global => "global",
            Winner::Local => "local",
            Winner::Tie => "tie",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerRecord {
    pub region: u64,
    pub k: usize,
    pub data_qoi: f64,
    pub subset_global: Vec<usize>,
    pub subset_local: Vec<usize>,
    pub err_global: f64,
    pub err_local: f64,
    pub winner: Winner,
    /// `err_global - err_local`.
    pub difference: f64,
    /// Equal subsets, or errors closer than `near_tie_scale * s^2`.
    pub near_tie: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub mcmc: McmcSettings,
    /// Errors closer than `near_tie_scale * s^2` are flagged as a near tie,
    /// where `s` is the likelihood scale. The winner itself is strict.
    pub near_tie_scale: f64,
    /// Chains advanced together per work item.
    pub group: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            mcmc: McmcSettings { store_samples: false, ..McmcSettings::default() },
            near_tie_scale: 1.0,
            group: 32,
        }
    }
}

fn same_set(a: &[usize], b: &[usize]) -> bool {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort_unstable();
    b.sort_unstable();
    a == b
}

/// Smaller error wins; only equal subsets tie.
fn judge(global: &[usize], local: &[usize], eg: f64, el: f64) -> Winner {
    if same_set(global, local) || eg == el {
        Winner::Tie
    } else if el < eg {
        Winner::Local
    } else {
        Winner::Global
    }
}

fn near_tie(task: &CalibrationTask, local: &[usize], eg: f64, el: f64, settings: &ExperimentSettings) -> bool {
    let s = settings.mcmc.noise_rel * task.data_qoi.abs();
    same_set(&task.free_subset, local) || (eg - el).abs() <= settings.near_tie_scale * s * s
}

/// Calibrates with the global and the local top-`k` subsets on the same
/// synthetic data and the same chain seed.
pub fn compare_subsets(
    model: &dyn QoiModel,
    grid: &RegionGrid,
    region_index: u64,
    k: usize,
    global_ranking: &[usize],
    local_ranking: &[usize],
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<WinnerRecord> {
    let out = experiment_sweep(model, grid, &[(region_index, local_ranking.to_vec())], global_ranking, &[k], settings, seed)?;
    match out.failures.into_iter().next() {
        Some((_, _, e)) => Err(e),
        None => Ok(out.records.into_iter().next().expect("one record")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    /// Ordered by region, then k.
    pub records: Vec<WinnerRecord>,
    /// `(region, k, error)`.
    pub failures: Vec<(u64, usize, Error)>,
}

/// Per-k percentages of global wins, local wins, ties and near ties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRates {
    pub regions: usize,
    pub global: f64,
    pub local: f64,
    pub tie: f64,
    pub near_tie: f64,
}

impl ExperimentOutcome {
    pub fn win_rates(&self) -> BTreeMap<usize, WinRates> {
        let mut tally: BTreeMap<usize, [usize; 4]> = BTreeMap::new();
        for r in &self.records {
            let t = tally.entry(r.k).or_default();
            match r.winner {
                Winner::Global => t[0] += 1,
                Winner::Local => t[1] += 1,
                Winner::Tie => t[2] += 1,
            }
            if r.near_tie {
                t[3] += 1;
            }
        }
        tally
            .into_iter()
            .map(|(k, [g, l, t, near])| {
                let n = g + l + t;
                let pct = |c: usize| 100.0 * c as f64 / n as f64;
                (k, WinRates { regions: n, global: pct(g), local: pct(l), tie: pct(t), near_tie: pct(near) })
            })
            .collect()
    }
}

/// Sorted sample of `count` distinct region indices.
pub fn subsample_regions(total: u64, count: usize, seed: u64) -> Vec<u64> {
    if count as u64 >= total {
        return (0..total).collect();
    }
    let mut rng = rng_from_seed(seed);
    let mut picked: Vec<u64> = rand::seq::index::sample(&mut rng, total as usize, count)
        .into_iter()
        .map(|i| i as u64)
        .collect();
    picked.sort_unstable();
    picked
}

/// Global-versus-local comparison for every listed region and every `k`.
///
/// `regions` pairs a region index with its local ranking. Synthetic data is
/// drawn once per region; chains for equal subsets are shared.
pub fn experiment_sweep(
    model: &dyn QoiModel,
    grid: &RegionGrid,
    regions: &[(u64, Vec<usize>)],
    global_ranking: &[usize],
    ks: &[usize],
    settings: &ExperimentSettings,
    seed: u64,
) -> Result<ExperimentOutcome> {
    settings.mcmc.validate()?;
    struct Pair {
        region: u64,
        k: usize,
        global: std::result::Result<CalibrationTask, Error>,
        local: Vec<usize>,
        chain_seed: u64,
    }
    let mut pairs = Vec::new();
    for (region, local) in regions {
        let task_seed = derive_seed(seed, *region);
        for &k in ks {
            pairs.push(Pair {
                region: *region,
                k,
                global: make_task(model, grid, *region, k, global_ranking, task_seed),
                local: local.clone(),
                chain_seed: derive_seed(task_seed, k as u64),
            });
        }
    }

    // unique chains: (pair index, is_local)
    let mut local_tasks: Vec<Option<CalibrationTask>> = Vec::with_capacity(pairs.len());
    let mut jobs: Vec<(usize, bool)> = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let lt = match &p.global {
            Ok(g) if p.local.len() == g.space.dim() => {
                let mut t = g.clone();
                t.free_subset = p.local[..p.k].to_vec();
                Some(t)
            }
            _ => None,
        };
        if let (Ok(g), Some(l)) = (&p.global, &lt) {
            jobs.push((i, false));
            if !same_set(&g.free_subset, &l.free_subset) {
                jobs.push((i, true));
            }
        }
        local_tasks.push(lt);
    }

    let group = settings.group.max(1);
    let results: Vec<Result<Vec<ChainResult>>> = jobs
        .par_chunks(group)
        .map(|chunk| {
            let batch: Vec<(&CalibrationTask, u64)> = chunk
                .iter()
                .map(|&(i, is_local)| {
                    let t = if is_local {
                        local_tasks[i].as_ref().unwrap()
                    } else {
                        pairs[i].global.as_ref().unwrap()
                    };
                    (t, pairs[i].chain_seed)
                })
                .collect();
            run_chains(model, &batch, &settings.mcmc)
        })
        .collect();
    let mut errs: BTreeMap<(usize, bool), f64> = BTreeMap::new();
    for (chunk, res) in jobs.chunks(group).zip(results) {
        for (job, r) in chunk.iter().zip(res?) {
            errs.insert(*job, r.fit_error);
        }
    }

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (i, p) in pairs.into_iter().enumerate() {
        let g = match p.global {
            Ok(g) => g,
            Err(e) => {
                failures.push((p.region, p.k, e.in_region(p.region)));
                continue;
            }
        };
        if local_tasks[i].is_none() {
            failures.push((p.region, p.k, Error::DimensionMismatch { expected: g.space.dim(), got: p.local.len() }));
            continue;
        }
        let eg = errs[&(i, false)];
        let el = errs.get(&(i, true)).copied().unwrap_or(eg);
        let subset_local = p.local[..p.k].to_vec();
        let winner = judge(&g.free_subset, &subset_local, eg, el);
        let near = near_tie(&g, &subset_local, eg, el, settings);
        records.push(WinnerRecord {
            region: p.region,
            k: p.k,
            data_qoi: g.data_qoi,
            subset_global: g.free_subset.clone(),
            subset_local,
            err_global: eg,
            err_local: el,
            winner,
            difference: eg - el,
            near_tie: near,
        });
    }
    Ok(ExperimentOutcome { records, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LotkaVolterra;
    use crate::sampling::grid_partition;

    /// Quantity of interest `1 + x_i`.
    struct Coord(usize, usize);

    impl QoiModel for Coord {
        fn name(&self) -> &str {
            "coord"
        }
        fn dim(&self) -> usize {
            self.1
        }
        fn space(&self) -> ParameterSpace {
            ParameterSpace::unit(self.1)
        }
        fn evaluate(&self, x: &[f64]) -> Result<f64> {
            Ok(1.0 + x[self.0])
        }
    }

    fn lv_task(k: usize, ranking: &[usize], seed: u64) -> (LotkaVolterra, RegionGrid, CalibrationTask) {
        let lv = LotkaVolterra::default();
        let grid = grid_partition(&lv.space(), 4).unwrap();
        let t = make_task(&lv, &grid, 1234, k, ranking, seed).unwrap();
        (lv, grid, t)
    }

    #[test]
    fn task_construction() {
        let global = [0, 2, 3, 1, 4, 5];
        let (_, grid, t) = lv_task(1, &global, 3);
        assert_eq!(t.free_subset, vec![0]);
        assert_eq!(t.fixed_values, vec![0.5; 6]);
        let bounds = grid.region_bounds(1234).unwrap();
        assert!(bounds.contains(&t.true_params));
        let (_, _, again) = lv_task(1, &global, 3);
        assert_eq!(t, again);
        let (_, _, a) = lv_task(6, &global, 3);
        let (_, _, b) = lv_task(6, &[3, 1, 2, 4, 5, 0], 3);
        assert_eq!(a.free_sorted(), b.free_sorted());
        assert_eq!(a.true_params, b.true_params);
    }

    #[test]
    fn identifiable_scalar_problem_is_solved() {
        let model = Coord(0, 3);
        let grid = grid_partition(&model.space(), 1).unwrap();
        let mut task = make_task(&model, &grid, 0, 1, &[0, 1, 2], 1).unwrap();
        task.fixed_values = task.true_params.clone();
        let res = adaptive_metropolis(&model, &task, &McmcSettings::default(), 2).unwrap();
        assert!(res.fit_error < 1e-8, "{}", res.fit_error);
        assert!((res.best_fit[0] - task.true_params[0]).abs() < 1e-3);
        assert_eq!(res.samples.len(), 4000);
    }

    #[test]
    fn flat_likelihood_accepts_everything_in_range() {
        let model = Coord(0, 2);
        let grid = grid_partition(&model.space(), 1).unwrap();
        let task = make_task(&model, &grid, 0, 2, &[0, 1], 1).unwrap();
        let settings = McmcSettings { noise_rel: 1e12, initial_step: 1e-3, regularization: 0.0, ..Default::default() };
        let res = adaptive_metropolis(&model, &task, &settings, 5).unwrap();
        assert!(res.acceptance_rate > 0.4, "{}", res.acceptance_rate);
        let tiny = McmcSettings { adapt_start: usize::MAX / 4, iterations: 2000, burn_in: 0, ..settings };
        assert!(tiny.validate().is_err());
        let fixed = McmcSettings { adapt_start: 2000, iterations: 2000, burn_in: 0, ..settings };
        let res = adaptive_metropolis(&model, &task, &fixed, 5).unwrap();
        assert!(res.acceptance_rate > 0.99, "{}", res.acceptance_rate);
    }

    /// `1 + sqrt(d^T P d)`: with data 1 and s = 1 the likelihood is the
    /// Gaussian with precision `P` centred in the box.
    struct Gauss;

    impl QoiModel for Gauss {
        fn name(&self) -> &str {
            "gauss"
        }
        fn dim(&self) -> usize {
            2
        }
        fn space(&self) -> ParameterSpace {
            ParameterSpace::unit(2)
        }
        fn evaluate(&self, x: &[f64]) -> Result<f64> {
            let d = [x[0] - 0.5, x[1] - 0.5];
            Ok(1.0 + (400.0 * d[0] * d[0] - 400.0 * d[0] * d[1] + 400.0 * d[1] * d[1]).sqrt())
        }
    }

    #[test]
    fn gaussian_target_moments() {
        let task = CalibrationTask {
            region_index: 0,
            true_params: vec![0.5, 0.5],
            data_qoi: 1.0,
            k: 2,
            free_subset: vec![0, 1],
            fixed_values: vec![0.5, 0.5],
            space: ParameterSpace::unit(2),
        };
        let settings = McmcSettings { iterations: 100_000, burn_in: 5_000, noise_rel: 1.0, ..Default::default() };
        let res = adaptive_metropolis(&Gauss, &task, &settings, 77).unwrap();
        // covariance = P^-1 with P = [[400, -200], [-200, 400]]
        let det: f64 = 400.0 * 400.0 - 200.0 * 200.0;
        let cov = [[400.0 / det, 200.0 / det], [200.0 / det, 400.0 / det]];
        let n = res.samples.len() as f64;
        let mean: Vec<f64> = (0..2).map(|j| res.samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
        for j in 0..2 {
            assert!((mean[j] - 0.5).abs() < 0.05 * cov[j][j].sqrt(), "{mean:?}");
        }
        for a in 0..2 {
            for b in 0..2 {
                let c = res.samples.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / (n - 1.0);
                assert!((c - cov[a][b]).abs() < 0.05 * cov[a][b].abs(), "{a}{b}: {c} vs {}", cov[a][b]);
            }
        }
    }

    #[test]
    fn best_fit_is_a_running_minimum() {
        let (lv, _, task) = lv_task(2, &[0, 2, 3, 1, 4, 5], 9);
        let short = McmcSettings { iterations: 1600, ..Default::default() };
        let long = McmcSettings { iterations: 3000, ..Default::default() };
        let a = adaptive_metropolis(&lv, &task, &short, 4).unwrap();
        let b = adaptive_metropolis(&lv, &task, &long, 4).unwrap();
        assert!(b.fit_error <= a.fit_error);
        assert!(a.fit_error >= 0.0);
        let again = adaptive_metropolis(&lv, &task, &short, 4).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn grouping_does_not_change_chains() {
        let (lv, _, t1) = lv_task(2, &[0, 2, 3, 1, 4, 5], 1);
        let (_, _, t2) = lv_task(3, &[3, 1, 2, 4, 5, 0], 2);
        let s = McmcSettings { iterations: 1600, store_samples: false, ..Default::default() };
        let both = run_chains(&lv, &[(&t1, 5), (&t2, 6)], &s).unwrap();
        assert_eq!(both[0], adaptive_metropolis(&lv, &t1, &s, 5).unwrap());
        assert_eq!(both[1], adaptive_metropolis(&lv, &t2, &s, 6).unwrap());
    }

    #[test]
    fn equal_sets_tie_and_full_sets_always_tie() {
        let lv = LotkaVolterra::default();
        let grid = grid_partition(&lv.space(), 4).unwrap();
        let settings = ExperimentSettings {
            mcmc: McmcSettings { iterations: 1600, store_samples: false, ..Default::default() },
            ..Default::default()
        };
        let global = [0, 2, 3, 1, 4, 5];
        let local = [2, 0, 1, 3, 5, 4];
        let r = compare_subsets(&lv, &grid, 77, 2, &global, &local, &settings, 3).unwrap();
        assert_eq!(r.winner, Winner::Tie);
        assert_eq!(r.difference, 0.0);
        let out = experiment_sweep(&lv, &grid, &[(5, local.to_vec()), (9, global.to_vec())], &global, &[6], &settings, 1).unwrap();
        assert!(out.records.iter().all(|r| r.winner == Winner::Tie && r.difference == 0.0));
        assert_eq!(out.win_rates()[&6].tie, 100.0);
    }

    #[test]
    fn subsample_is_sorted_distinct_and_seeded() {
        let a = subsample_regions(4096, 500, 1);
        assert_eq!(a.len(), 500);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, subsample_regions(4096, 500, 1));
        assert_eq!(subsample_regions(10, 50, 1).len(), 10);
    }
}
