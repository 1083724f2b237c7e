//! Gradients of a quantity of interest in unit-scaled coordinates.
//!
//! All gradients are taken with respect to coordinates scaled so that the
//! admissible box becomes `[0,1]^m`: component `i` is `df/dx_i * (upper_i - lower_i)`.
//! Finite differences use the central stencil with step `h` in scaled units.
//! When a stencil point would leave the admissible box, the component falls
//! back to the second-order one-sided stencil pointing into the box. Leaving
//! a local region while staying inside the admissible box is not special.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::QoiModel;
use crate::sampling::ParameterSpace;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Points per work item when fanning a batch out across workers.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    /// Point in model units.
    pub x: Vec<f64>,
    /// Gradient with respect to unit-scaled coordinates.
    pub g: Vec<f64>,
    /// QoI at `x`, when it was evaluated.
    pub f_center: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    #[default]
    FiniteDifference,
    /// Closed-form gradient when the model has one; finite differences otherwise.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradientConfig {
    pub mode: GradientMode,
    pub step: f64,
    /// Also evaluate the QoI at every sample point.
    pub record_value: bool,
}

impl Default for GradientConfig {
    fn default() -> Self {
        GradientConfig { mode: GradientMode::FiniteDifference, step: DEFAULT_STEP, record_value: false }
    }
}

impl GradientConfig {
    pub fn analytic() -> Self {
        GradientConfig { mode: GradientMode::Analytic, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy)]
enum Stencil {
    Central,
    Forward,
    Backward,
}

/// Offsets (in multiples of the step) and weights of each stencil.
fn stencil_terms(kind: Stencil) -> &'static [(f64, f64)] {
    match kind {
        Stencil::Central => &[(1.0, 0.5), (-1.0, -0.5)],
        Stencil::Forward => &[(0.0, -1.5), (1.0, 2.0), (2.0, -0.5)],
        Stencil::Backward => &[(0.0, 1.5), (-1.0, -2.0), (-2.0, 0.5)],
    }
}

struct PointPlan {
    kinds: Vec<Stencil>,
    /// index into the evaluation list of f(x), if needed
    center: Option<usize>,
    /// first evaluation index of each axis' stencil
    offsets: Vec<usize>,
}

fn choose_stencil(space: &ParameterSpace, x: &[f64], axis: usize, h: f64) -> Result<Stencil> {
    let delta = h * space.width(axis);
    let down_ok = x[axis] - delta >= space.lower[axis];
    let up_ok = x[axis] + delta <= space.upper[axis];
    match (down_ok, up_ok) {
        (true, true) => Ok(Stencil::Central),
        (false, true) if x[axis] + 2.0 * delta <= space.upper[axis] => Ok(Stencil::Forward),
        (true, false) if x[axis] - 2.0 * delta >= space.lower[axis] => Ok(Stencil::Backward),
        _ => Err(Error::InvalidArgument(format!(
            "step {h} does not fit inside axis {axis} of the admissible box"
        ))),
    }
}

/// Finite-difference gradients for a slice of points, sharing one batched
/// model evaluation.
fn fd_chunk(
    model: &dyn QoiModel,
    space: &ParameterSpace,
    points: &[Vec<f64>],
    h: f64,
    record_value: bool,
) -> Vec<Result<GradientSample>> {
    let m = space.dim();
    let mut evals: Vec<Vec<f64>> = Vec::with_capacity(points.len() * (2 * m + 1));
    let mut plans: Vec<Result<PointPlan>> = Vec::with_capacity(points.len());
    for x in points {
        let kinds: Result<Vec<Stencil>> = if x.len() != m {
            Err(Error::DimensionMismatch { expected: m, got: x.len() })
        } else if !space.contains(x) {
            Err(Error::InvalidArgument(format!("point {x:?} lies outside the admissible box")))
        } else {
            (0..m).map(|axis| choose_stencil(space, x, axis, h)).collect()
        };
        let kinds = match kinds {
            Ok(k) => k,
            Err(e) => {
                plans.push(Err(e));
                continue;
            }
        };
        let one_sided = kinds.iter().any(|k| !matches!(k, Stencil::Central));
        let center = if record_value || one_sided {
            evals.push(x.clone());
            Some(evals.len() - 1)
        } else {
            None
        };
        let mut offsets = Vec::with_capacity(m);
        for (axis, kind) in kinds.iter().enumerate() {
            offsets.push(evals.len());
            let delta = h * space.width(axis);
            for &(off, _) in stencil_terms(*kind) {
                if off == 0.0 {
                    continue;
                }
                let mut p = x.clone();
                p[axis] += off * delta;
                evals.push(p);
            }
        }
        plans.push(Ok(PointPlan { kinds, center, offsets }));
    }

    let values = model.evaluate_batch(&evals);
    let value_at = |i: usize| -> Result<f64> {
        match &values[i] {
            Ok(v) if v.is_finite() => Ok(*v),
            Ok(v) => Err(Error::GradientEvaluation {
                point: evals[i].clone(),
                reason: format!("non-finite model output {v}"),
            }),
            Err(e) => Err(Error::GradientEvaluation { point: evals[i].clone(), reason: e.to_string() }),
        }
    };

    points
        .iter()
        .zip(plans)
        .map(|(x, plan)| {
            let plan = plan?;
            let f0 = plan.center.map(value_at).transpose()?;
            let mut g = Vec::with_capacity(m);
            for (axis, kind) in plan.kinds.iter().enumerate() {
                let mut acc = 0.0;
                let mut slot = plan.offsets[axis];
                for &(off, w) in stencil_terms(*kind) {
                    let v = if off == 0.0 {
                        f0.expect("one-sided stencils evaluate the centre")
                    } else {
                        slot += 1;
                        value_at(slot - 1)?
                    };
                    acc += w * v;
                }
                g.push(acc / h);
            }
            Ok(GradientSample { x: x.clone(), g, f_center: f0 })
        })
        .collect()
}

/// Central-difference gradient at `x` in unit-scaled coordinates of `space`.
pub fn central_diff(model: &dyn QoiModel, space: &ParameterSpace, x: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {h} must be positive")));
    }
    fd_chunk(model, space, &[x.to_vec()], h, false)
        .pop()
        .expect("one result")
        .map(|s| s.g)
}

fn analytic_sample(
    model: &dyn QoiModel,
    space: &ParameterSpace,
    x: &[f64],
    record_value: bool,
) -> Option<Result<GradientSample>> {
    let g = model.analytic_gradient(x)?;
    let sample = (|| {
        if g.len() != space.dim() {
            return Err(Error::DimensionMismatch { expected: space.dim(), got: g.len() });
        }
        let g: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * space.width(i)).collect();
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::GradientEvaluation {
                point: x.to_vec(),
                reason: format!("non-finite analytic gradient component {bad}"),
            });
        }
        let f_center = if record_value { Some(model.evaluate(x)?) } else { None };
        Ok(GradientSample { x: x.to_vec(), g, f_center })
    })();
    Some(sample)
}

/// One gradient sample per point, in input order.
///
/// Points are processed in parallel chunks; failures are collected with the
/// index of the offending point.
pub fn gradient_batch(
    model: &dyn QoiModel,
    space: &ParameterSpace,
    points: &[Vec<f64>],
    config: &GradientConfig,
) -> Result<Vec<GradientSample>> {
    if !(config.step > 0.0 && config.step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {} must be positive",
            config.step
        )));
    }
    let use_analytic = config.mode == GradientMode::Analytic
        && points.first().is_some_and(|x| model.analytic_gradient(x).is_some());
    let results: Vec<Result<GradientSample>> = if use_analytic {
        points
            .par_iter()
            .map(|x| {
                analytic_sample(model, space, x, config.record_value).unwrap_or_else(|| {
                    fd_chunk(model, space, std::slice::from_ref(x), config.step, config.record_value)
                        .pop()
                        .expect("one result")
                })
            })
            .collect()
    } else {
        points
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| fd_chunk(model, space, chunk, config.step, config.record_value))
            .collect()
    };
    let mut samples = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => failures.push((i, e)),
        }
    }
    if failures.is_empty() {
        Ok(samples)
    } else {
        Err(Error::GradientBatch(failures))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{grad_f1, TestFunction};
    use crate::sampling::lhs;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Affine {
        a: Vec<f64>,
        space: ParameterSpace,
        calls: AtomicUsize,
    }

    impl QoiModel for Affine {
        fn name(&self) -> &str {
            "affine"
        }
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn space(&self) -> ParameterSpace {
            self.space.clone()
        }
        fn evaluate(&self, x: &[f64]) -> Result<f64> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + 0.25)
        }
    }

    struct Square;

    impl QoiModel for Square {
        fn name(&self) -> &str {
            "square"
        }
        fn dim(&self) -> usize {
            1
        }
        fn space(&self) -> ParameterSpace {
            ParameterSpace::unit(1)
        }
        fn evaluate(&self, x: &[f64]) -> Result<f64> {
            Ok(x[0] * x[0])
        }
    }

    struct Blowup;

    impl QoiModel for Blowup {
        fn name(&self) -> &str {
            "blowup"
        }
        fn dim(&self) -> usize {
            2
        }
        fn space(&self) -> ParameterSpace {
            ParameterSpace::unit(2)
        }
        fn evaluate(&self, x: &[f64]) -> Result<f64> {
            Ok(if x[0] > 0.5 { f64::NAN } else { x[1] })
        }
    }

    fn affine() -> Affine {
        let space = ParameterSpace::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.0, -2.0, 10.0],
            vec![1.0, 2.0, 10.5],
        )
        .unwrap();
        Affine { a: vec![1.5, -0.25, 4.0], space, calls: AtomicUsize::new(0) }
    }

    #[test]
    fn affine_gradients_are_exact_in_scaled_units() {
        let model = affine();
        let space = model.space();
        for h in [1e-5, 1e-3, 0.05] {
            let g = central_diff(&model, &space, &[0.5, 0.0, 10.25], h).unwrap();
            let want = [1.5 * 1.0, -0.25 * 4.0, 4.0 * 0.5];
            for (a, b) in g.iter().zip(want) {
                assert!((a - b).abs() < 1e-8 / h.max(1e-3), "{g:?}");
            }
        }
    }

    #[test]
    fn f1_gradient_at_center() {
        let space = ParameterSpace::unit(2);
        let g = central_diff(&TestFunction::F1, &space, &[0.5, 0.5], 1e-5).unwrap();
        let e = 0.5f64.exp();
        assert!((g[0] - 0.7 * e).abs() < 1e-8);
        assert!((g[1] - 0.3 * e).abs() < 1e-8);
    }

    #[test]
    fn quadratic_is_exact() {
        let g = central_diff(&Square, &ParameterSpace::unit(1), &[0.3], 1e-5).unwrap();
        assert!((g[0] - 0.6).abs() < 1e-10);
        // one-sided stencils are also exact on quadratics
        let g = central_diff(&Square, &ParameterSpace::unit(1), &[0.0], 1e-3).unwrap();
        assert!(g[0].abs() < 1e-12);
        let g = central_diff(&Square, &ParameterSpace::unit(1), &[1.0], 1e-3).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn empty_batch() {
        let out = gradient_batch(&TestFunction::F2, &ParameterSpace::unit(2), &[], &Default::default())
            .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn analytic_and_fd_modes_agree() {
        let space = ParameterSpace::unit(2);
        let pts = lhs(50, &space, 4);
        let fd = gradient_batch(&TestFunction::F2, &space, &pts, &GradientConfig::default()).unwrap();
        let an = gradient_batch(&TestFunction::F2, &space, &pts, &GradientConfig::analytic()).unwrap();
        for (a, b) in fd.iter().zip(&an) {
            assert_eq!(a.x, b.x);
            for (u, v) in a.g.iter().zip(&b.g) {
                assert!((u - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fd_uses_two_evaluations_per_axis() {
        let model = affine();
        let space = model.space();
        let pts = lhs(40, &ParameterSpace::new(space.names.clone(), vec![0.1, -1.0, 10.1], vec![0.9, 1.0, 10.4]).unwrap(), 9);
        model.calls.store(0, Ordering::Relaxed);
        let out = gradient_batch(&model, &space, &pts, &GradientConfig::default()).unwrap();
        assert_eq!(out.len(), 40);
        assert_eq!(model.calls.load(Ordering::Relaxed), 40 * 2 * 3);
        assert!(out.iter().all(|s| s.f_center.is_none()));

        let cfg = GradientConfig { record_value: true, ..Default::default() };
        let out = gradient_batch(&model, &space, &pts, &cfg).unwrap();
        let x = &out[7].x;
        assert_eq!(out[7].f_center, Some(model.evaluate(x).unwrap()));
    }

    #[test]
    fn analytic_mode_scales_by_box_width() {
        let space = ParameterSpace::new(vec!["a".into(), "b".into()], vec![0.0, 0.0], vec![2.0, 0.5]).unwrap();
        let out = gradient_batch(&TestFunction::F1, &space, &[vec![0.2, 0.1]], &GradientConfig::analytic())
            .unwrap();
        let g = grad_f1(&[0.2, 0.1]);
        assert_eq!(out[0].g, vec![g[0] * 2.0, g[1] * 0.5]);
    }

    #[test]
    fn failures_carry_point_indices() {
        let space = ParameterSpace::unit(2);
        let pts = vec![vec![0.2, 0.2], vec![0.7, 0.2], vec![0.3, 0.9], vec![0.9, 0.9]];
        match gradient_batch(&Blowup, &space, &pts, &GradientConfig::default()) {
            Err(Error::GradientBatch(f)) => {
                let idx: Vec<usize> = f.iter().map(|(i, _)| *i).collect();
                assert_eq!(idx, vec![1, 3]);
                assert!(matches!(f[0].1, Error::GradientEvaluation { .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn boundary_points_use_one_sided_stencils() {
        let space = ParameterSpace::unit(2);
        let g = central_diff(&TestFunction::F1, &space, &[0.0, 1.0], 1e-5).unwrap();
        let want = grad_f1(&[0.0, 1.0]);
        assert!((g[0] - want[0]).abs() < 1e-8 && (g[1] - want[1]).abs() < 1e-8);
    }
}
