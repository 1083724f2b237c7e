//! Scalar quantities of interest studied by the toolkit.

mod analytic;
mod lotka_volterra;

pub use analytic::{eval_f1, eval_f2, eval_f3, grad_f1, grad_f2, grad_f3, TestFunction};
pub use lotka_volterra::{
    lv_qoi, lv_qoi_batch, lv_qoi_with_step, lv_rhs, lv_solve, LotkaVolterra, LvParams, LvState, DEFAULT_DT,
    INITIAL_R, INITIAL_S, OBSERVATION_DAYS, PARAM_NAMES,
};

use crate::error::{Error, Result};
use crate::sampling::ParameterSpace;

/// A deterministic map from `R^m` to a scalar quantity of interest.
pub trait QoiModel: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Admissible parameter box with axis names.
    fn space(&self) -> ParameterSpace;

    fn evaluate(&self, x: &[f64]) -> Result<f64>;

    /// Evaluates many points; one result per point, in order.
    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Vec<Result<f64>> {
        xs.iter().map(|x| self.evaluate(x)).collect()
    }

    /// Gradient in the model's own units, when known in closed form.
    fn analytic_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<T: QoiModel + ?Sized> QoiModel for &T {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn space(&self) -> ParameterSpace {
        (**self).space()
    }
    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        (**self).evaluate(x)
    }
    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Vec<Result<f64>> {
        (**self).evaluate_batch(xs)
    }
    fn analytic_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        (**self).analytic_gradient(x)
    }
}

pub const MODEL_NAMES: [&str; 4] = ["f1", "f2", "f3", "lotka-volterra"];

/// Looks a model up by its registry name.
pub fn model_by_name(name: &str) -> Option<Box<dyn QoiModel>> {
    match name {
        "f1" => Some(Box::new(TestFunction::F1)),
        "f2" => Some(Box::new(TestFunction::F2)),
        "f3" => Some(Box::new(TestFunction::F3)),
        "lotka-volterra" | "lv" => Some(Box::new(LotkaVolterra::default())),
        _ => None,
    }
}

/// Evaluates `points` across the worker pool, preserving order.
///
/// Non-finite outputs count as failures; the first failure (lowest index)
/// is returned.
pub fn evaluate_all(model: &dyn QoiModel, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let values: Vec<Result<f64>> = points
        .par_chunks(64)
        .flat_map_iter(|chunk| model.evaluate_batch(chunk))
        .collect();
    values
        .into_iter()
        .zip(points)
        .map(|(v, x)| match v {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(v) => Err(Error::ModelEvaluation { point: x.clone(), reason: format!("non-finite output {v}") }),
            Err(Error::ModelEvaluation { point, reason }) => Err(Error::ModelEvaluation { point, reason }),
            Err(e) => Err(Error::ModelEvaluation { point: x.clone(), reason: e.to_string() }),
        })
        .collect()
}
