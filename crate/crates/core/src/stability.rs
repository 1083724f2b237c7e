//! Local-versus-global sensitivity sweeps over a region grid.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activesub::{activity_scores, eigendecompose, estimate_c, subspace_distance, ActivityScores, SubspaceResult};
use crate::error::{Error, Result};
use crate::gradients::{gradient_batch, GradientConfig};
use crate::gsa::{morris, sobol, MorrisConfig, MorrisResult, SobolResult};
use crate::models::QoiModel;
use crate::sampling::{derive_seed, lhs, ParameterSpace, RegionGrid, SamplingPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAnalysis {
    /// `None` for the full-space analysis.
    pub region_index: Option<u64>,
    pub subspace: SubspaceResult,
    pub scores: ActivityScores,
    pub morris: Option<MorrisResult>,
    pub sobol: Option<SobolResult>,
    pub distance_to_global: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Activity,
    Morris,
    Sobol,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Activity, Metric::Morris, Metric::Sobol];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Activity => "activity",
            Metric::Morris => "morris",
            Metric::Sobol => "sobol",
        }
    }
}

impl LocalAnalysis {
    pub fn ranking(&self, metric: Metric) -> Option<Vec<usize>> {
        match metric {
            Metric::Activity => Some(self.scores.ranking.clone()),
            Metric::Morris => self.morris.as_ref().map(|r| r.ranking()),
            Metric::Sobol => self.sobol.as_ref().map(|r| r.ranking()),
        }
    }
}

/// Comparator methods run alongside the active subspace.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Methods {
    pub morris: Option<MorrisConfig>,
    /// Sobol' base sample count.
    pub sobol: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub plan: SamplingPlan,
    /// Active dimension used for every distance.
    pub n: usize,
    pub gradient: GradientConfig,
    pub methods: Methods,
}

/// `grad_space` is the admissible box used by finite-difference stencils;
/// comparators run on `box_`.
fn analyze_design(
    model: &dyn QoiModel,
    grad_space: &ParameterSpace,
    box_: &ParameterSpace,
    design: &[Vec<f64>],
    seed: u64,
    gradient: &GradientConfig,
    methods: &Methods,
) -> Result<(SubspaceResult, ActivityScores, Option<MorrisResult>, Option<SobolResult>)> {
    let grads = gradient_batch(model, grad_space, design, gradient)?;
    let sub = eigendecompose(&estimate_c(&grads)?)?;
    let scores = activity_scores(&sub);
    let morris = methods.morris.map(|cfg| morris(model, box_, &cfg, derive_seed(seed, 1))).transpose()?;
    let sobol = methods.sobol.map(|n| sobol(model, box_, n, derive_seed(seed, 2))).transpose()?;
    Ok((sub, scores, morris, sobol))
}

/// Full pipeline on one region: seeded design, gradients, spectrum, scores,
/// and the spectral distance between the leading `n` local and global
/// eigenvectors.
pub fn analyze_region(
    model: &dyn QoiModel,
    grid: &RegionGrid,
    region_index: u64,
    global: &SubspaceResult,
    config: &SweepConfig,
) -> Result<LocalAnalysis> {
    let run = || -> Result<LocalAnalysis> {
        if config.plan.samples == 0 {
            return Err(Error::InvalidArgument("at least one sample per region is required".into()));
        }
        let bounds = grid.region_bounds(region_index)?;
        let design = config.plan.region_design(grid, region_index)?;
        let seed = derive_seed(config.plan.master_seed, region_index);
        // stencils may cross region edges but never the admissible box
        let (sub, scores, morris, sobol) =
            analyze_design(model, &grid.space, &bounds, &design, seed, &config.gradient, &config.methods)?;
        let distance = subspace_distance(&sub.leading(config.n)?, &global.leading(config.n)?)?;
        Ok(LocalAnalysis {
            region_index: Some(region_index),
            subspace: sub.with_dimension(config.n)?,
            scores,
            morris,
            sobol,
            distance_to_global: distance,
        })
    };
    run().map_err(|e| e.in_region(region_index))
}

/// The pipeline on an arbitrary sub-box `bounds` of `space`, with
/// finite-difference stencils confined to `space` as in a sweep. The result
/// carries no region index and a zero distance.
pub fn analyze_box(
    model: &dyn QoiModel,
    space: &ParameterSpace,
    bounds: &ParameterSpace,
    samples: usize,
    seed: u64,
    n: usize,
    gradient: &GradientConfig,
    methods: &Methods,
) -> Result<LocalAnalysis> {
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    if !bounds.is_subset_of(space) {
        return Err(Error::InvalidArgument("analysis box is not inside the admissible box".into()));
    }
    let design = lhs(samples, bounds, seed);
    let (sub, scores, morris, sobol) = analyze_design(model, space, bounds, &design, seed, gradient, methods)?;
    Ok(LocalAnalysis { region_index: None, subspace: sub.with_dimension(n)?, scores, morris, sobol, distance_to_global: 0.0 })
}

/// The same pipeline on one design of `samples` points over the whole box.
///
/// With `n = None` the active dimension comes from the eigenvalue gap.
pub fn global_analysis(
    model: &dyn QoiModel,
    space: &ParameterSpace,
    samples: usize,
    seed: u64,
    n: Option<usize>,
    gradient: &GradientConfig,
    methods: &Methods,
) -> Result<LocalAnalysis> {
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample is required".into()));
    }
    let design = lhs(samples, space, seed);
    let (sub, scores, morris, sobol) = analyze_design(model, space, space, &design, seed, gradient, methods)?;
    let sub = match n {
        Some(n) => sub.with_dimension(n)?,
        None => sub.with_auto_dimension()?,
    };
    Ok(LocalAnalysis { region_index: None, subspace: sub, scores, morris, sobol, distance_to_global: 0.0 })
}

/// Analyses of the listed regions, in the order given. Regions run in
/// parallel; each result depends only on its own index.
pub fn analyze_regions(
    model: &dyn QoiModel,
    grid: &RegionGrid,
    indices: &[u64],
    global: &SubspaceResult,
    config: &SweepConfig,
) -> Vec<Result<LocalAnalysis>> {
    indices
        .par_iter()
        .map(|&i| analyze_region(model, grid, i, global, config))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// Successful analyses in region order.
    pub analyses: Vec<LocalAnalysis>,
    pub failures: Vec<(u64, Error)>,
}

impl SweepOutcome {
    pub fn success_rate(&self) -> f64 {
        let total = self.analyses.len() + self.failures.len();
        if total == 0 {
            1.0
        } else {
            self.analyses.len() as f64 / total as f64
        }
    }
}

/// Every region of `grid`. Failing regions are collected, not fatal.
pub fn sweep(model: &dyn QoiModel, grid: &RegionGrid, global: &SubspaceResult, config: &SweepConfig) -> SweepOutcome {
    let indices: Vec<u64> = (0..grid.total_regions).collect();
    let mut analyses = Vec::with_capacity(indices.len());
    let mut failures = Vec::new();
    for (i, r) in indices.iter().zip(analyze_regions(model, grid, &indices, global, config)) {
        match r {
            Ok(a) => analyses.push(a),
            Err(e) => {
                log::warn!("region {i} failed: {e}");
                failures.push((*i, e));
            }
        }
    }
    SweepOutcome { analyses, failures }
}

/// Frequency table of rank orders.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingCensus {
    pub counts: BTreeMap<Vec<usize>, u64>,
    pub unique_count: usize,
    pub total: u64,
    pub global_ranking: Vec<usize>,
    /// 1-based position of the global ranking in [`RankingCensus::ordered`];
    /// `None` when no region produced it.
    pub global_ranking_position: Option<usize>,
    pub global_ranking_frequency: u64,
}

impl RankingCensus {
    /// Rankings by descending frequency, ties in lexicographic order.
    pub fn ordered(&self) -> Vec<(Vec<usize>, u64)> {
        let mut v: Vec<(Vec<usize>, u64)> = self.counts.iter().map(|(k, c)| (k.clone(), *c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v
    }

    pub fn top(&self, n: usize) -> Vec<(Vec<usize>, u64)> {
        let mut v = self.ordered();
        v.truncate(n);
        v
    }
}

pub fn census<I: IntoIterator<Item = Vec<usize>>>(rankings: I, global_ranking: &[usize]) -> RankingCensus {
    let mut counts: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
    let mut total = 0;
    for r in rankings {
        *counts.entry(r).or_default() += 1;
        total += 1;
    }
    let mut c = RankingCensus {
        unique_count: counts.len(),
        counts,
        total,
        global_ranking: global_ranking.to_vec(),
        global_ranking_position: None,
        global_ranking_frequency: 0,
    };
    c.global_ranking_frequency = c.counts.get(global_ranking).copied().unwrap_or(0);
    if c.global_ranking_frequency > 0 {
        c.global_ranking_position = c.ordered().iter().position(|(r, _)| r == global_ranking).map(|p| p + 1);
    }
    c
}

/// Percentage of rankings placing each parameter within the first `k` slots.
pub fn topk_membership<'a, I>(rankings: I, m: usize, k: usize) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [usize]>,
{
    if k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("top-k size {k} out of 1..={m}")));
    }
    let mut hits = vec![0u64; m];
    let mut total = 0u64;
    for r in rankings {
        if r.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: r.len() });
        }
        for &p in &r[..k] {
            hits[p] += 1;
        }
        total += 1;
    }
    Ok(hits.iter().map(|&h| if total == 0 { 0.0 } else { 100.0 * h as f64 / total as f64 }).collect())
}

/// Mean distance to the global subspace per (parameter, bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMap {
    pub bins: usize,
    /// `means[parameter][bin]`; NaN where no region contributed.
    pub means: Vec<Vec<f64>>,
    pub counts: Vec<Vec<u64>>,
}

impl DistanceMap {
    /// Largest over smallest mean along one parameter's row.
    pub fn row_ratio(&self, parameter: usize) -> f64 {
        let row = &self.means[parameter];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        max / min
    }
}

pub fn distance_map<I>(records: I, grid: &RegionGrid) -> Result<DistanceMap>
where
    I: IntoIterator<Item = (u64, f64)>,
{
    let (m, k) = (grid.dim(), grid.bins_per_dim);
    let mut sums = vec![vec![0.0; k]; m];
    let mut counts = vec![vec![0u64; k]; m];
    for (index, d) in records {
        for (axis, b) in grid.multi_index(index)?.into_iter().enumerate() {
            sums[axis][b] += d;
            counts[axis][b] += 1;
        }
    }
    let means = sums
        .iter()
        .zip(&counts)
        .map(|(s, c)| s.iter().zip(c).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect())
        .collect();
    Ok(DistanceMap { bins: k, means, counts })
}

/// A named sub-box of the admissible space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// `(axis, lower, upper)` restrictions; unlisted axes keep their range.
    pub restrictions: Vec<(usize, f64, f64)>,
}

impl Scenario {
    pub fn apply(&self, space: &ParameterSpace) -> Result<ParameterSpace> {
        let mut s = space.clone();
        for &(axis, lo, hi) in &self.restrictions {
            s = s.restrict(axis, lo, hi)?;
        }
        Ok(s)
    }
}

/// Small growth (both growth rates `<= threshold`), large growth (both
/// `> threshold`) and the full box, for a model whose first two axes are
/// growth rates.
pub fn growth_scenarios(space: &ParameterSpace, threshold: f64) -> Vec<Scenario> {
    let (lo0, hi0, lo1, hi1) = (space.lower[0], space.upper[0], space.lower[1], space.upper[1]);
    vec![
        Scenario { name: "small-growth".into(), restrictions: vec![(0, lo0, threshold), (1, lo1, threshold)] },
        Scenario { name: "large-growth".into(), restrictions: vec![(0, threshold, hi0), (1, threshold, hi1)] },
        Scenario { name: "full".into(), restrictions: vec![] },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub space: ParameterSpace,
    pub eigenvalues: Vec<f64>,
    /// Squared components of the first eigenvector.
    pub w1_squared: Vec<f64>,
    /// Squared components of the second eigenvector.
    pub w2_squared: Vec<f64>,
    pub scores: ActivityScores,
}

/// Global pipeline on each scenario's box with the same seed.
pub fn restricted_eigenstudy(
    model: &dyn QoiModel,
    space: &ParameterSpace,
    scenarios: &[Scenario],
    samples: usize,
    seed: u64,
    gradient: &GradientConfig,
) -> Result<Vec<ScenarioResult>> {
    scenarios
        .iter()
        .map(|sc| {
            let bounds = sc.apply(space)?;
            let a = global_analysis(model, &bounds, samples, seed, Some(1), gradient, &Methods::default())?;
            let w = &a.subspace.eigenvectors;
            let col = |j: usize| -> Vec<f64> {
                if j < w.ncols() {
                    w.column(j).iter().map(|v| v * v).collect()
                } else {
                    Vec::new()
                }
            };
            Ok(ScenarioResult {
                name: sc.name.clone(),
                space: bounds,
                eigenvalues: a.subspace.eigenvalues.clone(),
                w1_squared: col(0),
                w2_squared: col(1),
                scores: a.scores,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TestFunction;
    use crate::sampling::grid_partition;

    fn config(samples: usize, seed: u64, n: usize) -> SweepConfig {
        SweepConfig {
            plan: SamplingPlan { samples, master_seed: seed },
            n,
            gradient: GradientConfig::default(),
            methods: Methods::default(),
        }
    }

    fn f1_global() -> LocalAnalysis {
        global_analysis(&TestFunction::F1, &ParameterSpace::unit(2), 1000, 1, Some(1), &GradientConfig::default(), &Methods::default())
            .unwrap()
    }

    #[test]
    fn f1_global_scores_match_rank_one_oracle() {
        let g = f1_global();
        assert_eq!(g.scores.ranking, vec![0, 1]);
        assert!((g.scores.normalized[1] - 0.09 / 0.49).abs() < 1e-6);
        assert_eq!(g.distance_to_global, 0.0);
        assert_eq!(g.region_index, None);
    }

    #[test]
    fn f1_regions_agree_with_global() {
        let g = f1_global();
        let grid = grid_partition(&ParameterSpace::unit(2), 10).unwrap();
        let out = sweep(&TestFunction::F1, &grid, &g.subspace, &config(10, 3, 1));
        assert!(out.failures.is_empty());
        assert_eq!(out.analyses.len(), 100);
        for a in &out.analyses {
            assert_eq!(a.scores.ranking, vec![0, 1]);
            assert!(a.distance_to_global < 1e-3);
        }
        let map = distance_map(out.analyses.iter().map(|a| (a.region_index.unwrap(), a.distance_to_global)), &grid)
            .unwrap();
        assert!(map.means.iter().flatten().all(|&d| d < 1e-3));
        assert!(map.counts.iter().flatten().all(|&c| c == 10));
        let ranks: Vec<Vec<usize>> = out.analyses.iter().map(|a| a.scores.ranking.clone()).collect();
        let top1 = topk_membership(ranks.iter().map(|r| r.as_slice()), 2, 1).unwrap();
        assert_eq!(top1, vec![100.0, 0.0]);
        let top2 = topk_membership(ranks.iter().map(|r| r.as_slice()), 2, 2).unwrap();
        assert_eq!(top2, vec![100.0, 100.0]);
        let c = census(ranks, &g.scores.ranking);
        assert_eq!((c.unique_count, c.total, c.global_ranking_position), (1, 100, Some(1)));
    }

    #[test]
    fn single_region_grid_reproduces_global_analysis() {
        let space = ParameterSpace::unit(2);
        let grid = grid_partition(&space, 1).unwrap();
        let master = 17;
        let g = global_analysis(
            &TestFunction::F3,
            &space,
            50,
            derive_seed(master, 0),
            Some(1),
            &GradientConfig::default(),
            &Methods::default(),
        )
        .unwrap();
        let out = sweep(&TestFunction::F3, &grid, &g.subspace, &config(50, master, 1));
        assert_eq!(out.analyses.len(), 1);
        assert_eq!(out.analyses[0].distance_to_global, 0.0);
        assert_eq!(out.analyses[0].subspace, g.subspace);
    }

    #[test]
    fn f3_near_origin_is_far_from_global() {
        let space = ParameterSpace::unit(2);
        let g = global_analysis(&TestFunction::F3, &space, 10_000, 2, Some(1), &GradientConfig::default(), &Methods::default())
            .unwrap();
        let grid = grid_partition(&space, 10).unwrap();
        let cfg = config(10, 4, 1);
        let near = analyze_region(&TestFunction::F3, &grid, 0, &g.subspace, &cfg).unwrap();
        let far = analyze_region(&TestFunction::F3, &grid, 99, &g.subspace, &cfg).unwrap();
        assert!(near.distance_to_global > 0.5, "{}", near.distance_to_global);
        assert!(far.distance_to_global < near.distance_to_global);
    }

    #[test]
    fn region_errors_carry_the_index() {
        let g = f1_global();
        let grid = grid_partition(&ParameterSpace::unit(2), 2).unwrap();
        let err = analyze_region(&TestFunction::F1, &grid, 9, &g.subspace, &config(5, 0, 1)).unwrap_err();
        assert!(matches!(err, Error::Region { index: 9, .. }));
    }

    #[test]
    fn comparators_run_per_region() {
        let g = f1_global();
        let grid = grid_partition(&ParameterSpace::unit(2), 2).unwrap();
        let mut cfg = config(10, 0, 1);
        cfg.methods = Methods { morris: Some(MorrisConfig { trajectories: 10, ..Default::default() }), sobol: Some(64) };
        let a = analyze_region(&TestFunction::F1, &grid, 3, &g.subspace, &cfg).unwrap();
        assert_eq!(a.ranking(Metric::Morris), Some(vec![0, 1]));
        assert_eq!(a.ranking(Metric::Sobol), Some(vec![0, 1]));
    }

    #[test]
    fn census_positions() {
        let r = |v: &[usize]| v.to_vec();
        let c = census(vec![r(&[1, 0, 2]), r(&[0, 1, 2]), r(&[1, 0, 2]), r(&[2, 1, 0])], &[0, 1, 2]);
        assert_eq!(c.unique_count, 3);
        assert_eq!(c.total, 4);
        assert_eq!(c.top(1), vec![(r(&[1, 0, 2]), 2)]);
        assert_eq!(c.global_ranking_position, Some(2));
        assert_eq!(c.global_ranking_frequency, 1);
        let c = census(vec![r(&[1, 0])], &[0, 1]);
        assert_eq!((c.global_ranking_position, c.global_ranking_frequency), (None, 0));
        assert!(topk_membership(std::iter::empty::<&[usize]>(), 2, 3).is_err());
    }

    #[test]
    fn full_box_scenario_matches_global_run() {
        let space = ParameterSpace::unit(2);
        let sc = Scenario { name: "full".into(), restrictions: vec![] };
        let study = restricted_eigenstudy(&TestFunction::F3, &space, &[sc], 200, 9, &GradientConfig::default()).unwrap();
        let g = global_analysis(&TestFunction::F3, &space, 200, 9, Some(1), &GradientConfig::default(), &Methods::default())
            .unwrap();
        assert_eq!(study[0].eigenvalues, g.subspace.eigenvalues);
        let w = &g.subspace.eigenvectors;
        assert_eq!(study[0].w1_squared, vec![w[(0, 0)].powi(2), w[(1, 0)].powi(2)]);
    }
}
