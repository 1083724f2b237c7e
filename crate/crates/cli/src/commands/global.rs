use std::collections::BTreeMap;

use serde::Serialize;
use subspace_stability::stability::{growth_scenarios, restricted_eigenstudy};

use super::{methods, Setup};
use crate::config::{Method, RunConfig};
use crate::error::CliError;
use crate::output::{num, Provenance};

#[derive(Serialize)]
struct Summary<'a> {
    provenance: &'a Provenance,
    model: &'a str,
    samples: usize,
    active_dim: usize,
    eigenvalues: &'a [f64],
    rankings: BTreeMap<&'static str, String>,
}

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::new(config)?;
    let selected = config.methods_or(&[Method::Activity, Method::Morris, Method::Sobol]);
    let g = super::global(&setup, config, &methods(config, &selected, true))?;
    let m = setup.space.dim();

    let mut header = vec!["metric"];
    header.extend(setup.names().iter().map(|s| s.as_str()));
    let row = |label: &str, values: &[f64]| -> Vec<String> {
        std::iter::once(label.to_string()).chain(values.iter().map(|v| num(*v))).collect()
    };
    let mut rows = vec![row("activity", &g.scores.normalized), row("activity_raw", &g.scores.raw)];
    let mut rankings = BTreeMap::new();
    rankings.insert("activity", setup.ranking_text(&g.scores.ranking));
    if let Some(mo) = &g.morris {
        rows.push(row("mu", &mo.mu));
        rows.push(row("mu_star", &mo.mu_star));
        rows.push(row("sigma", &mo.sigma));
        rankings.insert("morris", setup.ranking_text(&mo.ranking()));
    }
    if let Some(so) = &g.sobol {
        rows.push(row("S_i", &so.first_order));
        rows.push(row("S_Ti", &so.total_effect));
        rankings.insert("sobol", setup.ranking_text(&so.ranking()));
    }
    setup.out.write_csv("global_metrics.csv", &header, rows)?;
    setup.out.write_json("global_subspace.json", &g.subspace)?;
    setup.out.write_json(
        "global_summary.json",
        &Summary {
            provenance: &setup.out.provenance,
            model: setup.model.name(),
            samples: config.global_samples,
            active_dim: g.subspace.n,
            eigenvalues: &g.subspace.eigenvalues,
            rankings,
        },
    )?;

    if config.scenarios.enabled {
        if setup.model.name() != "lotka-volterra" {
            return Err(CliError::Usage("scenarios: growth-rate scenarios need the lotka-volterra model".into()));
        }
        let scenarios = growth_scenarios(&setup.space, config.scenarios.threshold);
        let results = restricted_eigenstudy(
            setup.model.as_ref(),
            &setup.space,
            &scenarios,
            config.global_samples,
            config.seed,
            &config.gradient_config(),
        )?;
        let mut header = vec!["scenario".to_string(), "quantity".to_string()];
        header.extend((1..=m).map(|j| format!("v{j}")));
        let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let mut rows = Vec::new();
        for r in &results {
            for (q, values) in [
                ("eigenvalue", &r.eigenvalues),
                ("w1_squared", &r.w1_squared),
                ("w2_squared", &r.w2_squared),
                ("activity", &r.scores.normalized),
            ] {
                let mut row = vec![r.name.clone(), q.to_string()];
                row.extend(values.iter().map(|v| num(*v)));
                rows.push(row);
            }
        }
        setup.out.write_csv("scenarios.csv", &header, rows)?;
    }
    Ok(())
}
