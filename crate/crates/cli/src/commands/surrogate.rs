use serde::Serialize;
use subspace_stability::sampling::{derive_seed, grid_partition, ParameterSpace, SamplingPlan};
use subspace_stability::stability::{analyze_box, analyze_region, LocalAnalysis, Methods, SweepConfig};
use subspace_stability::surrogate::{compare_global_local, Comparison, SurrogateData, SurrogateSettings};

use super::Setup;
use crate::config::{ActiveDim, RunConfig};
use crate::error::CliError;
use crate::output::{num, Provenance};

/// Stream of the seed tree reserved for a bounds-specified region.
const BOX_STREAM: u64 = u64::MAX;
/// Stream of the seed tree used for the training and testing designs.
const DATA_STREAM: u64 = u64::MAX - 1;

#[derive(Serialize)]
struct Best {
    n: usize,
    source: &'static str,
    order: usize,
    n_coeffs: usize,
    aic: f64,
    rmse: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    provenance: &'a Provenance,
    model: &'a str,
    region_index: Option<u64>,
    lower: &'a [f64],
    upper: &'a [f64],
    train: usize,
    test: usize,
    local_eigenvalues: &'a [f64],
    best: Vec<Best>,
}

fn region(
    setup: &Setup,
    config: &RunConfig,
    global: &LocalAnalysis,
    n: usize,
) -> Result<(ParameterSpace, LocalAnalysis), CliError> {
    let s = &config.surrogate;
    let gradient = config.gradient_config();
    let m = setup.space.dim();
    match (&s.region, &s.bounds) {
        (Some(multi), None) => {
            let grid = grid_partition(&setup.space, config.bins_for(m))?;
            let index = grid
                .index_of(multi)
                .map_err(|e| CliError::Usage(format!("region: {e}")))?;
            let plan = SamplingPlan { samples: config.region_samples, master_seed: config.seed };
            let sweep = SweepConfig { plan, n, gradient, methods: Methods::default() };
            let local = analyze_region(setup.model.as_ref(), &grid, index, &global.subspace, &sweep)?;
            Ok((grid.region_bounds(index)?, LocalAnalysis { region_index: Some(index), ..local }))
        }
        (None, Some(b)) => {
            let bounds = ParameterSpace::new(setup.names().to_vec(), b.lower.clone(), b.upper.clone())
                .map_err(|e| CliError::Usage(format!("bounds: {e}")))?;
            if !bounds.is_subset_of(&setup.space) {
                return Err(CliError::Usage("bounds: region leaves the model's parameter box".into()));
            }
            let local = analyze_box(
                setup.model.as_ref(),
                &setup.space,
                &bounds,
                config.region_samples,
                derive_seed(config.seed, BOX_STREAM),
                n,
                &gradient,
                &Methods::default(),
            )?;
            Ok((bounds, local))
        }
        _ => Err(CliError::Usage("surrogate: name the region by exactly one of region or bounds".into())),
    }
}

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::new(config)?;
    let m = setup.space.dim();
    let dims: Vec<usize> = if config.surrogate.dims.is_empty() {
        (1..m.max(2)).collect()
    } else {
        config.surrogate.dims.clone()
    };
    if let Some(&bad) = dims.iter().find(|&&n| n == 0 || n >= m.max(2)) {
        return Err(CliError::Usage(format!("dims: {bad} is outside 1..{}", m.max(2) - 1)));
    }
    let n = match config.active_dim {
        ActiveDim::Fixed(n) => n,
        ActiveDim::Auto => *dims.iter().max().expect("dims is not empty"),
    };
    let global = super::global(&setup, config, &Methods::default())?;
    let (bounds, local) = region(&setup, config, &global, n)?;
    let settings = SurrogateSettings {
        train: config.surrogate.train,
        test: config.surrogate.test,
        aic_source: config.surrogate.aic,
    };
    let data = SurrogateData::generate(setup.model.as_ref(), &bounds, &settings, derive_seed(config.seed, DATA_STREAM))?;
    let comparisons =
        compare_global_local(&data, &setup.space, &global.subspace, &local.subspace, &dims, settings.aic_source)?;

    let label = |c: &Comparison| c.source().label();
    let comparison_rows = comparisons.iter().map(|c| {
        let b = &c.selection.best;
        vec![
            c.n().to_string(),
            label(c).to_string(),
            b.order().to_string(),
            b.n_coeffs().to_string(),
            num(b.train_rss),
            num(b.test_rss),
            num(b.aic),
            num(c.rmse),
        ]
    });
    setup.out.write_csv(
        "surrogate_comparison.csv",
        &["n", "source", "order", "n_coeffs", "train_rss", "test_rss", "aic", "rmse"],
        comparison_rows,
    )?;

    let mut candidate_rows = Vec::new();
    for c in &comparisons {
        for (d, cand) in c.selection.candidates.iter().enumerate() {
            let order = (d + 1).to_string();
            let row = match cand {
                Ok(s) => vec![
                    c.n().to_string(),
                    label(c).to_string(),
                    order,
                    s.n_coeffs().to_string(),
                    num(s.train_rss),
                    num(s.test_rss),
                    num(s.aic),
                    (s.order() == c.selection.best.order()).to_string(),
                ],
                Err(e) => {
                    log::warn!("n={} {} order {order}: {e}", c.n(), label(c));
                    vec![c.n().to_string(), label(c).to_string(), order, String::new(), String::new(), String::new(), String::new(), "false".into()]
                }
            };
            candidate_rows.push(row);
        }
    }
    setup.out.write_csv(
        "surrogate_candidates.csv",
        &["n", "source", "order", "n_coeffs", "train_rss", "test_rss", "aic", "selected"],
        candidate_rows,
    )?;

    let point_rows = comparisons.iter().flat_map(|c| {
        c.actual.iter().zip(&c.predicted).enumerate().map(move |(i, (a, p))| {
            vec![c.n().to_string(), label(c).to_string(), i.to_string(), num(*a), num(*p)]
        })
    });
    setup.out.write_csv("surrogate_points.csv", &["n", "source", "point", "actual", "predicted"], point_rows)?;

    let summary = Summary {
        provenance: &setup.out.provenance,
        model: setup.model.name(),
        region_index: local.region_index,
        lower: &bounds.lower,
        upper: &bounds.upper,
        train: settings.train,
        test: settings.test,
        local_eigenvalues: &local.subspace.eigenvalues,
        best: comparisons
            .iter()
            .map(|c| Best {
                n: c.n(),
                source: label(c),
                order: c.selection.best.order(),
                n_coeffs: c.selection.best.n_coeffs(),
                aic: c.selection.best.aic,
                rmse: c.rmse,
            })
            .collect(),
    };
    setup.out.write_json("surrogate_summary.json", &summary)?;
    Ok(())
}
