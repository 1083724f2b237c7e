use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use subspace_stability::calibration::{experiment_sweep, subsample_regions, ExperimentSettings, McmcSettings, WinRates};
use subspace_stability::ranking::parse_ranking;
use subspace_stability::sampling::{derive_seed, grid_partition, PlanDocument, RegionGrid, SamplingPlan};
use subspace_stability::stability::{analyze_regions, Methods, SweepConfig};

use super::Setup;
use crate::config::{ActiveDim, RunConfig};
use crate::error::CliError;
use crate::output::{ints, num, read_csv, Provenance};

/// Stream of the seed tree used to pick the subsampled regions.
const SUBSAMPLE_STREAM: u64 = u64::MAX - 2;

#[derive(Serialize)]
struct DifferenceStats {
    mean: f64,
    median: f64,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct PerK {
    #[serde(flatten)]
    rates: WinRates,
    difference: DifferenceStats,
}

#[derive(Serialize)]
struct Failure {
    region: u64,
    k: Option<usize>,
    error: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    provenance: &'a Provenance,
    model: &'a str,
    regions: usize,
    iterations: usize,
    burn_in: usize,
    noise_rel: f64,
    global_ranking: String,
    per_k: BTreeMap<usize, PerK>,
    failures: Vec<Failure>,
}

fn stats(mut v: Vec<f64>) -> DifferenceStats {
    if v.is_empty() {
        return DifferenceStats { mean: f64::NAN, median: f64::NAN, min: f64::NAN, max: f64::NAN };
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    DifferenceStats { mean: v.iter().sum::<f64>() / n as f64, median, min: v[0], max: v[n - 1] }
}

/// Local rankings of `indices` from an earlier stability run in `dir`.
fn load_rankings(
    dir: &Path,
    grid: &RegionGrid,
    plan: &SamplingPlan,
    names: &[String],
    indices: &[u64],
) -> Result<BTreeMap<u64, Vec<usize>>, CliError> {
    let usage = |msg: String| CliError::Usage(format!("stability_dir: {msg}"));
    let plan_path = dir.join("plan.json");
    let text = std::fs::read_to_string(&plan_path).map_err(|e| usage(format!("cannot read {}: {e}", plan_path.display())))?;
    let doc: PlanDocument = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", plan_path.display())))?;
    if doc != PlanDocument::new(grid, plan) {
        return Err(usage(format!("{} was made with a different grid, sample count or seed", plan_path.display())));
    }
    let (header, rows) = read_csv(&dir.join("regions.csv"))?;
    if header.get(0) != Some("region_index") || header.get(2) != Some("ranking") {
        return Err(usage("regions.csv has an unexpected header".into()));
    }
    let mut all = BTreeMap::new();
    for r in &rows {
        let index: u64 = r.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| usage(format!("bad row {r:?}")))?;
        let ranking = r.get(2).and_then(|s| parse_ranking(s, names)).ok_or_else(|| usage(format!("bad row {r:?}")))?;
        all.insert(index, ranking);
    }
    Ok(indices.iter().filter_map(|i| all.get(i).map(|r| (*i, r.clone()))).collect())
}

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::new(config)?;
    let m = setup.space.dim();
    let cal = &config.calibration;
    let ks: Vec<usize> = if cal.ks.is_empty() { (1..=m).collect() } else { cal.ks.clone() };
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > m) {
        return Err(CliError::Usage(format!("ks: {bad} is outside 1..={m}")));
    }

    let global = super::global(&setup, config, &Methods::default())?;
    let n = match config.active_dim {
        ActiveDim::Fixed(n) => n,
        ActiveDim::Auto => global.subspace.n,
    };
    let grid = grid_partition(&setup.space, config.bins_for(m))?;
    let plan = SamplingPlan { samples: config.region_samples, master_seed: config.seed };
    let indices = subsample_regions(grid.total_regions, cal.regions, derive_seed(config.seed, SUBSAMPLE_STREAM));

    let mut failures = Vec::new();
    let local: BTreeMap<u64, Vec<usize>> = match &cal.stability_dir {
        Some(dir) => load_rankings(dir, &grid, &plan, setup.names(), &indices)?,
        None => {
            let sweep = SweepConfig { plan, n, gradient: config.gradient_config(), methods: Methods::default() };
            let results = analyze_regions(setup.model.as_ref(), &grid, &indices, &global.subspace, &sweep);
            let mut out = BTreeMap::new();
            for (&i, r) in indices.iter().zip(results) {
                match r {
                    Ok(a) => {
                        out.insert(i, a.scores.ranking);
                    }
                    Err(e) => failures.push(Failure { region: i, k: None, error: e.to_string() }),
                }
            }
            out
        }
    };
    if local.len() < indices.len() && cal.stability_dir.is_some() {
        for &i in indices.iter().filter(|i| !local.contains_key(i)) {
            failures.push(Failure { region: i, k: None, error: "no ranking in regions.csv".into() });
        }
    }

    let settings = ExperimentSettings {
        mcmc: McmcSettings {
            iterations: cal.iterations,
            burn_in: cal.burn_in,
            noise_rel: cal.noise_rel,
            store_samples: false,
            ..McmcSettings::default()
        },
        near_tie_scale: cal.near_tie_scale,
        ..ExperimentSettings::default()
    };
    let regions: Vec<(u64, Vec<usize>)> = local.into_iter().collect();
    let outcome = experiment_sweep(
        setup.model.as_ref(),
        &grid,
        &regions,
        &global.scores.ranking,
        &ks,
        &settings,
        config.seed,
    )?;
    for (region, k, e) in &outcome.failures {
        failures.push(Failure { region: *region, k: Some(*k), error: e.to_string() });
    }
    failures.sort_by_key(|f| (f.region, f.k));

    let rows = outcome.records.iter().map(|r| {
        vec![
            r.region.to_string(),
            r.k.to_string(),
            ints(&r.subset_global),
            ints(&r.subset_local),
            num(r.err_global),
            num(r.err_local),
            r.winner.label().to_string(),
            num(r.difference),
            r.near_tie.to_string(),
        ]
    });
    setup.out.write_csv(
        "calibration.csv",
        &["region", "k", "subset_global", "subset_local", "err_global", "err_local", "winner", "difference", "near_tie"],
        rows,
    )?;

    let per_k = outcome
        .win_rates()
        .into_iter()
        .map(|(k, rates)| {
            let diffs = outcome.records.iter().filter(|r| r.k == k).map(|r| r.difference).collect();
            (k, PerK { rates, difference: stats(diffs) })
        })
        .collect();
    let attempted = indices.len() * ks.len();
    let failed_pairs: usize = failures.iter().map(|f| if f.k.is_some() { 1 } else { ks.len() }).sum();
    let summary = Summary {
        provenance: &setup.out.provenance,
        model: setup.model.name(),
        regions: indices.len(),
        iterations: cal.iterations,
        burn_in: cal.burn_in,
        noise_rel: cal.noise_rel,
        global_ranking: setup.ranking_text(&global.scores.ranking),
        per_k,
        failures,
    };
    setup.out.write_json("calibration_summary.json", &summary)?;
    if failed_pairs * 100 > attempted {
        return Err(CliError::Failure(format!(
            "{failed_pairs} of {attempted} region/k pairs failed; see calibration_summary.json"
        )));
    }
    Ok(())
}
