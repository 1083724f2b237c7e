use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use subspace_stability::ranking::parse_ranking;
use subspace_stability::sampling::{grid_partition, PlanDocument, RegionGrid, SamplingPlan};
use subspace_stability::stability::{analyze_regions, census, distance_map, topk_membership, Metric, SweepConfig};

use super::{methods, Setup};
use crate::config::{ActiveDim, Method, RunConfig};
use crate::error::CliError;
use crate::output::{ints, num, nums, Checkpoint, Provenance};

/// Regions analysed between checkpoint writes.
const BATCH: usize = 256;

/// Shown rankings per metric in the summary.
const SUMMARY_TOP: usize = 10;

/// One successful region, as stored in regions.csv.
struct Row {
    index: u64,
    rankings: BTreeMap<Metric, Vec<usize>>,
    distance: f64,
}

fn metric_of(method: Method) -> Metric {
    match method {
        Method::Activity => Metric::Activity,
        Method::Morris => Metric::Morris,
        Method::Sobol => Metric::Sobol,
    }
}

fn header(metrics: &[Metric]) -> Vec<String> {
    let mut h: Vec<String> = ["region_index", "bins", "ranking", "distance", "eigenvalues"].map(String::from).to_vec();
    for m in metrics {
        if *m != Metric::Activity {
            h.push(format!("{}_ranking", m.label()));
        }
    }
    h
}

fn parse_row(rec: &csv::StringRecord, metrics: &[Metric], names: &[String]) -> Result<Row, CliError> {
    let bad = || CliError::Failure(format!("regions.csv: malformed row {rec:?}"));
    let index: u64 = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let distance: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
    let mut rankings = BTreeMap::new();
    let mut col = 5;
    for m in metrics {
        let field = if *m == Metric::Activity {
            rec.get(2)
        } else {
            col += 1;
            rec.get(col - 1)
        };
        let r = field.and_then(|s| parse_ranking(s, names)).ok_or_else(bad)?;
        rankings.insert(*m, r);
    }
    Ok(Row { index, rankings, distance })
}

#[derive(Serialize)]
struct Failure {
    region: u64,
    error: String,
}

#[derive(Serialize)]
struct TopRanking {
    ranking: String,
    count: u64,
}

#[derive(Serialize)]
struct MetricSummary {
    unique_count: usize,
    global_ranking: String,
    global_ranking_position: Option<usize>,
    global_ranking_frequency: u64,
    top: Vec<TopRanking>,
}

#[derive(Serialize)]
struct Summary<'a> {
    provenance: &'a Provenance,
    model: &'a str,
    bins: usize,
    region_samples: usize,
    active_dim: usize,
    regions_total: u64,
    regions_succeeded: usize,
    regions_failed: usize,
    success_rate: f64,
    metrics: BTreeMap<&'static str, MetricSummary>,
    failures: Vec<Failure>,
}

pub fn run(config: &RunConfig, resume: bool) -> Result<(), CliError> {
    let setup = Setup::new(config)?;
    let m = setup.space.dim();
    let selected = config.methods_or(&[Method::Activity]);
    if !selected.contains(&Method::Activity) {
        return Err(CliError::Usage("methods: the stability sweep always needs activity".into()));
    }
    let metrics: Vec<Metric> = selected.iter().map(|&s| metric_of(s)).collect();
    let global = super::global(&setup, config, &methods(config, &selected, true))?;
    let n = match config.active_dim {
        ActiveDim::Fixed(n) => n,
        ActiveDim::Auto => global.subspace.n,
    };
    let grid: RegionGrid = grid_partition(&setup.space, config.bins_for(m))?;
    let plan = SamplingPlan { samples: config.region_samples, master_seed: config.seed };
    let sweep = SweepConfig { plan, n, gradient: config.gradient_config(), methods: methods(config, &selected, false) };
    setup.out.write_json("plan.json", &PlanDocument::new(&grid, &plan))?;

    let head = header(&metrics);
    let head_ref: Vec<&str> = head.iter().map(|s| s.as_str()).collect();
    let (mut checkpoint, existing) =
        Checkpoint::open(&setup.out.path("regions.csv"), &setup.out.provenance, &head_ref, resume)?;
    let mut rows: Vec<Row> = existing.iter().map(|r| parse_row(r, &metrics, setup.names())).collect::<Result<_, _>>()?;
    let done: BTreeSet<u64> = rows.iter().map(|r| r.index).collect();
    let todo: Vec<u64> = (0..grid.total_regions).filter(|i| !done.contains(i)).collect();
    if !done.is_empty() {
        log::info!("resuming: {} regions already in regions.csv", done.len());
    }

    let mut failures = Vec::new();
    for batch in todo.chunks(BATCH) {
        let results = analyze_regions(setup.model.as_ref(), &grid, batch, &global.subspace, &sweep);
        let mut lines = Vec::new();
        for (&index, res) in batch.iter().zip(results) {
            match res {
                Ok(a) => {
                    let mut line = vec![
                        index.to_string(),
                        ints(&grid.multi_index(index)?),
                        setup.ranking_text(&a.scores.ranking),
                        num(a.distance_to_global),
                        nums(&a.subspace.eigenvalues),
                    ];
                    let mut rankings = BTreeMap::new();
                    for &metric in &metrics {
                        let r = a.ranking(metric).expect("requested metric was computed");
                        if metric != Metric::Activity {
                            line.push(setup.ranking_text(&r));
                        }
                        rankings.insert(metric, r);
                    }
                    lines.push(line);
                    rows.push(Row { index, rankings, distance: a.distance_to_global });
                }
                Err(e) => {
                    log::warn!("region {index} failed: {e}");
                    failures.push(Failure { region: index, error: e.to_string() });
                }
            }
        }
        checkpoint.append(&lines)?;
    }
    rows.sort_by_key(|r| r.index);

    // census and top-k tables per metric
    let mut census_rows = Vec::new();
    let mut topk_rows = Vec::new();
    let mut metric_summaries = BTreeMap::new();
    for &metric in &metrics {
        let global_ranking = match metric {
            Metric::Activity => global.scores.ranking.clone(),
            Metric::Morris => global.morris.as_ref().expect("global Morris was run").ranking(),
            Metric::Sobol => global.sobol.as_ref().expect("global Sobol' was run").ranking(),
        };
        let rankings: Vec<&Vec<usize>> = rows.iter().map(|r| &r.rankings[&metric]).collect();
        let c = census(rankings.iter().map(|r| (*r).clone()), &global_ranking);
        for (pos, (ranking, count)) in c.ordered().into_iter().enumerate() {
            census_rows.push(vec![
                metric.label().to_string(),
                (pos + 1).to_string(),
                setup.ranking_text(&ranking),
                count.to_string(),
                num(100.0 * count as f64 / c.total.max(1) as f64),
            ]);
        }
        for k in 1..=m.min(3) {
            let pct = topk_membership(rankings.iter().map(|r| r.as_slice()), m, k)?;
            let mut row = vec![metric.label().to_string(), k.to_string()];
            row.extend(pct.iter().map(|v| num(*v)));
            topk_rows.push(row);
        }
        metric_summaries.insert(
            metric.label(),
            MetricSummary {
                unique_count: c.unique_count,
                global_ranking: setup.ranking_text(&global_ranking),
                global_ranking_position: c.global_ranking_position,
                global_ranking_frequency: c.global_ranking_frequency,
                top: c.top(SUMMARY_TOP).into_iter().map(|(r, count)| TopRanking { ranking: setup.ranking_text(&r), count }).collect(),
            },
        );
    }
    setup.out.write_csv("census.csv", &["metric", "position", "ranking", "count", "percent"], census_rows)?;
    let mut topk_header = vec!["metric", "k"];
    topk_header.extend(setup.names().iter().map(|s| s.as_str()));
    setup.out.write_csv("topk.csv", &topk_header, topk_rows)?;

    let map = distance_map(rows.iter().map(|r| (r.index, r.distance)), &grid)?;
    let mut map_header = vec!["bin"];
    map_header.extend(setup.names().iter().map(|s| s.as_str()));
    let map_rows = (0..map.bins).map(|b| {
        std::iter::once(b.to_string()).chain((0..m).map(|p| num(map.means[p][b]))).collect::<Vec<_>>()
    });
    setup.out.write_csv("distance_map.csv", &map_header, map_rows)?;

    failures.sort_by_key(|f| f.region);
    let total = grid.total_regions;
    let success_rate = rows.len() as f64 / total as f64;
    let summary = Summary {
        provenance: &setup.out.provenance,
        model: setup.model.name(),
        bins: grid.bins_per_dim,
        region_samples: config.region_samples,
        active_dim: n,
        regions_total: total,
        regions_succeeded: rows.len(),
        regions_failed: failures.len(),
        success_rate,
        metrics: metric_summaries,
        failures,
    };
    setup.out.write_json("summary.json", &summary)?;
    if success_rate < 0.99 {
        return Err(CliError::Failure(format!(
            "{} of {total} regions failed; see summary.json",
            summary.regions_failed
        )));
    }
    Ok(())
}
