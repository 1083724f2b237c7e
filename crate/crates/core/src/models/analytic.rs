use crate::error::Result;
use crate::models::QoiModel;
use crate::sampling::ParameterSpace;

pub fn eval_f1(x: &[f64]) -> f64 {
    (0.7 * x[0] + 0.3 * x[1]).exp()
}

pub fn grad_f1(x: &[f64]) -> [f64; 2] {
    let f = eval_f1(x);
    [0.7 * f, 0.3 * f]
}

pub fn eval_f2(x: &[f64]) -> f64 {
    x[0] * (0.7 * x[0] + 0.3 * x[1]).exp()
}

pub fn grad_f2(x: &[f64]) -> [f64; 2] {
    let e = (0.7 * x[0] + 0.3 * x[1]).exp();
    [(1.0 + 0.7 * x[0]) * e, 0.3 * x[0] * e]
}

pub fn eval_f3(x: &[f64]) -> f64 {
    (0.7 * x[0] * x[0] * x[1] + 0.3 * x[1]).exp()
}

pub fn grad_f3(x: &[f64]) -> [f64; 2] {
    let f = eval_f3(x);
    [1.4 * x[0] * x[1] * f, (0.7 * x[0] * x[0] + 0.3) * f]
}

/// The two-dimensional test functions on `[0,1]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    F1,
    F2,
    F3,
}

impl QoiModel for TestFunction {
    fn name(&self) -> &str {
        match self {
            TestFunction::F1 => "f1",
            TestFunction::F2 => "f2",
            TestFunction::F3 => "f3",
        }
    }

    fn dim(&self) -> usize {
        2
    }

    fn space(&self) -> ParameterSpace {
        ParameterSpace::unit(2)
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(match self {
            TestFunction::F1 => eval_f1(x),
            TestFunction::F2 => eval_f2(x),
            TestFunction::F3 => eval_f3(x),
        })
    }

    fn analytic_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(
            match self {
                TestFunction::F1 => grad_f1(x),
                TestFunction::F2 => grad_f2(x),
                TestFunction::F3 => grad_f3(x),
            }
            .to_vec(),
        )
    }
}
