use subspace_stability::gradients::gradient_batch;
use subspace_stability::stability::Methods;

use super::Setup;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::num;

fn unit(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        (v.iter().map(|x| x / norm).collect(), norm)
    } else {
        (vec![0.0; v.len()], 0.0)
    }
}

/// Eigenvectors are defined up to sign; report the one whose largest
/// component is positive.
fn orient(mut v: Vec<f64>) -> Vec<f64> {
    let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let setup = Setup::new(config)?;
    let space = &setup.space;
    if space.dim() != 2 {
        return Err(CliError::Usage(format!(
            "model: gradfield needs a 2-D model, {} has {} parameters",
            setup.model.name(),
            space.dim()
        )));
    }
    let bins = config.bins.unwrap_or(config.gradfield.bins);
    let mut points = Vec::with_capacity(bins * bins + config.gradfield.points.len());
    let mut kinds = Vec::with_capacity(points.capacity());
    for i in 0..bins {
        for j in 0..bins {
            let u = [(i as f64 + 0.5) / bins as f64, (j as f64 + 0.5) / bins as f64];
            points.push(space.from_unit(&u));
            kinds.push("cell");
        }
    }
    for p in &config.gradfield.points {
        if !space.contains(p) {
            return Err(CliError::Usage(format!("at: ({}, {}) lies outside the parameter box", p[0], p[1])));
        }
        points.push(p.to_vec());
        kinds.push("point");
    }
    let samples = gradient_batch(setup.model.as_ref(), space, &points, &config.gradient_config())?;

    let mut rows: Vec<Vec<String>> = samples
        .iter()
        .zip(&kinds)
        .map(|(s, kind)| {
            let (d, mag) = unit(&s.g);
            vec![kind.to_string(), num(s.x[0]), num(s.x[1]), num(d[0]), num(d[1]), num(mag)]
        })
        .collect();
    let global = super::global(&setup, config, &Methods::default())?;
    let w1: Vec<f64> = global.subspace.eigenvectors.column(0).iter().copied().collect();
    let (d, _) = unit(&orient(w1));
    let c = space.center();
    rows.push(vec![
        "global".into(),
        num(c[0]),
        num(c[1]),
        num(d[0]),
        num(d[1]),
        num(global.subspace.eigenvalues[0].max(0.0).sqrt()),
    ]);
    setup.out.write_csv("gradfield.csv", &["kind", "x1", "x2", "d1", "d2", "magnitude"], rows)?;
    Ok(())
}
