//! Competitive Lotka-Volterra model of a two-population tumour spheroid.
//!
//! The quantity of interest is the integral of total volume `S + R` over a
//! 56-day observation window, approximated by the trapezoidal rule on the 57
//! daily samples of a classical RK4 trajectory. Parameter sets so stiff that
//! RK4 would need more than [`MAX_RK4_STEPS_PER_DAY`] steps (carrying
//! capacities near zero) are integrated with the L-stable Rosenbrock method
//! ROS2 at that step count instead.
//!
//! Batches of parameter sets are integrated in lockstep lanes (see
//! [`lv_qoi_batch`]); every lane performs exactly the floating-point operations
//! of the scalar path, so batched and single evaluations agree bit for bit.

use crate::error::{Error, Result};
use crate::models::QoiModel;
use crate::sampling::ParameterSpace;

/// Type-S volume at day 0 (mm^3).
pub const INITIAL_S: f64 = 0.018;
/// Type-R volume at day 0 (mm^3).
pub const INITIAL_R: f64 = 0.002;
pub const OBSERVATION_DAYS: u32 = 56;
/// Default RK4 step (days).
pub const DEFAULT_DT: f64 = 0.05;

/// Step cap for RK4 and the fixed resolution of the stiff fallback.
pub const MAX_RK4_STEPS_PER_DAY: u64 = 1000;

pub const PARAM_NAMES: [&str; 6] = ["r_S", "r_R", "K_S", "K_R", "gamma_S", "gamma_R"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvParams {
    pub r_s: f64,
    pub r_r: f64,
    pub k_s: f64,
    pub k_r: f64,
    pub gamma_s: f64,
    pub gamma_r: f64,
}

impl LvParams {
    /// Parameters in the order `[r_S, r_R, K_S, K_R, gamma_S, gamma_R]`.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != 6 {
            return Err(Error::DimensionMismatch { expected: 6, got: x.len() });
        }
        Ok(LvParams { r_s: x[0], r_r: x[1], k_s: x[2], k_r: x[3], gamma_s: x[4], gamma_r: x[5] })
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.r_s, self.r_r, self.k_s, self.k_r, self.gamma_s, self.gamma_r]
    }

    fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateParameters(format!("non-finite value in {self:?}")));
        }
        if self.k_s <= 0.0 || self.k_r <= 0.0 {
            return Err(Error::DegenerateParameters(format!(
                "carrying capacities must be positive (K_S = {}, K_R = {})",
                self.k_s, self.k_r
            )));
        }
        Ok(())
    }

    /// Infinity-norm bound on the Jacobian along any trajectory started from
    /// the fixed initial condition.
    fn stiffness_bound(&self) -> f64 {
        let s_max = INITIAL_S.max(self.k_s);
        let r_max = INITIAL_R.max(self.k_r);
        let (rs, rr) = (self.r_s.abs(), self.r_r.abs());
        let (gs, gr) = (self.gamma_s.abs(), self.gamma_r.abs());
        let row_s = rs * (1.0 + 2.0 * s_max / self.k_s + gr * r_max / self.k_s)
            + rs * gr * s_max / self.k_s;
        let row_r = rr * (1.0 + 2.0 * r_max / self.k_r + gs * s_max / self.k_r)
            + rr * gs * r_max / self.k_r;
        row_s.max(row_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LvState {
    pub s: f64,
    pub r: f64,
    pub t: f64,
}

/// Right-hand side with the reciprocal capacities hoisted out of the loop.
#[derive(Debug, Clone, Copy)]
struct Rhs {
    r_s: f64,
    r_r: f64,
    inv_ks: f64,
    inv_kr: f64,
    gamma_s: f64,
    gamma_r: f64,
}

impl Rhs {
    fn new(p: &LvParams) -> Self {
        Rhs {
            r_s: p.r_s,
            r_r: p.r_r,
            inv_ks: 1.0 / p.k_s,
            inv_kr: 1.0 / p.k_r,
            gamma_s: p.gamma_s,
            gamma_r: p.gamma_r,
        }
    }

    #[inline(always)]
    fn eval(&self, s: f64, r: f64) -> (f64, f64) {
        (
            self.r_s * s * (1.0 - (s + self.gamma_r * r) * self.inv_ks),
            self.r_r * r * (1.0 - (r + self.gamma_s * s) * self.inv_kr),
        )
    }
}

#[inline(always)]
fn rk4_step(f: &Rhs, h: f64, s: &mut f64, r: &mut f64) {
    let (k1s, k1r) = f.eval(*s, *r);
    let (k2s, k2r) = f.eval(*s + 0.5 * h * k1s, *r + 0.5 * h * k1r);
    let (k3s, k3r) = f.eval(*s + 0.5 * h * k2s, *r + 0.5 * h * k2r);
    let (k4s, k4r) = f.eval(*s + h * k3s, *r + h * k3r);
    *s = flush(*s + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s));
    *r = flush(*r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r));
}

/// Volumes below this are set to zero, an equilibrium of each equation.
/// Decaying populations otherwise sink into subnormal arithmetic.
pub const VOLUME_FLOOR: f64 = 1e-250;

#[inline(always)]
fn flush(v: f64) -> f64 {
    if v.abs() < VOLUME_FLOOR {
        0.0
    } else {
        v
    }
}

const ROS2_GAMMA: f64 = 1.0 + std::f64::consts::FRAC_1_SQRT_2;

#[inline(always)]
fn ros2_step(f: &Rhs, h: f64, s: &mut f64, r: &mut f64) {
    let (s0, r0) = (*s, *r);
    let a = f.r_s * (1.0 - (2.0 * s0 + f.gamma_r * r0) * f.inv_ks);
    let b = -f.r_s * f.gamma_r * s0 * f.inv_ks;
    let c = -f.r_r * f.gamma_s * r0 * f.inv_kr;
    let d = f.r_r * (1.0 - (2.0 * r0 + f.gamma_s * s0) * f.inv_kr);
    let gh = ROS2_GAMMA * h;
    let (m11, m12, m21, m22) = (1.0 - gh * a, -gh * b, -gh * c, 1.0 - gh * d);
    let det = m11 * m22 - m12 * m21;
    let solve = |v1: f64, v2: f64| ((m22 * v1 - m12 * v2) / det, (m11 * v2 - m21 * v1) / det);
    let (f1s, f1r) = f.eval(s0, r0);
    let (k1s, k1r) = solve(f1s, f1r);
    let (f2s, f2r) = f.eval(s0 + h * k1s, r0 + h * k1r);
    let (k2s, k2r) = solve(f2s - 2.0 * k1s, f2r - 2.0 * k1r);
    *s = flush(s0 + h * (1.5 * k1s + 0.5 * k2s));
    *r = flush(r0 + h * (1.5 * k1r + 0.5 * k2r));
}

/// dS/dt and dR/dt at `state`.
pub fn lv_rhs(state: &LvState, params: &LvParams) -> Result<(f64, f64)> {
    params.validate()?;
    let p = params;
    Ok((
        p.r_s * state.s * (1.0 - state.s / p.k_s - p.gamma_r * state.r / p.k_s),
        p.r_r * state.r * (1.0 - state.r / p.k_r - p.gamma_s * state.s / p.k_r),
    ))
}

fn base_steps_per_day(dt: f64) -> Result<u64> {
    if !(dt.is_finite() && dt > 0.0 && dt <= 1.0) {
        return Err(Error::InvalidArgument(format!("time step {dt} must lie in (0, 1] day")));
    }
    let n = (1.0 / dt).round();
    if (n * dt - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("time step {dt} does not divide one day")));
    }
    Ok(n as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Scheme {
    Rk4(u64),
    Ros2,
}

/// RK4 at the requested resolution, refined to a multiple of it so that
/// `h * L <= 2.5` where `L` bounds the Jacobian. That keeps `h * L` inside the
/// real RK4 stability interval (about 2.78), where the stability polynomial is
/// also positive, so both volumes stay nonnegative when carrying capacities
/// are small. Multiples keep the number of distinct step counts in a batch low.
fn scheme(params: &LvParams, base: u64) -> Scheme {
    let need = (params.stiffness_bound() / 2.5).ceil();
    if need <= base as f64 {
        Scheme::Rk4(base)
    } else if need <= MAX_RK4_STEPS_PER_DAY as f64 {
        Scheme::Rk4((need as u64).div_ceil(base) * base)
    } else {
        Scheme::Ros2
    }
}

fn diverged(params: &LvParams, day: u32) -> Error {
    Error::ModelEvaluation {
        point: params.to_array().to_vec(),
        reason: format!("trajectory diverged on day {day}"),
    }
}

/// RK4 trajectory sampled at integer days `0..=t_end`.
pub fn lv_solve(params: &LvParams, t_end: u32, dt: f64) -> Result<Vec<LvState>> {
    if t_end == 0 {
        return Err(Error::InvalidArgument("t_end must be at least one day".into()));
    }
    params.validate()?;
    let scheme = scheme(params, base_steps_per_day(dt)?);
    let f = Rhs::new(params);
    let (mut s, mut r) = (INITIAL_S, INITIAL_R);
    let mut out = Vec::with_capacity(t_end as usize + 1);
    out.push(LvState { s, r, t: 0.0 });
    for day in 1..=t_end {
        match scheme {
            Scheme::Rk4(n) => {
                let h = 1.0 / n as f64;
                for _ in 0..n {
                    rk4_step(&f, h, &mut s, &mut r);
                }
            }
            Scheme::Ros2 => {
                let h = 1.0 / MAX_RK4_STEPS_PER_DAY as f64;
                for _ in 0..MAX_RK4_STEPS_PER_DAY {
                    ros2_step(&f, h, &mut s, &mut r);
                }
            }
        }
        if !(s.is_finite() && r.is_finite()) {
            return Err(diverged(params, day));
        }
        out.push(LvState { s, r, t: day as f64 });
    }
    Ok(out)
}

pub fn lv_qoi(params: &LvParams) -> Result<f64> {
    lv_qoi_with_step(params, DEFAULT_DT)
}

/// Trapezoidal integral of `S + R` over the observation window with one-day bins.
pub fn lv_qoi_with_step(params: &LvParams, dt: f64) -> Result<f64> {
    lv_qoi_batch(std::slice::from_ref(params), dt).pop().expect("one result per input")
}

/// QoI for many parameter sets; one result per input, in input order.
pub fn lv_qoi_batch(params: &[LvParams], dt: f64) -> Vec<Result<f64>> {
    let base = match base_steps_per_day(dt) {
        Ok(b) => b,
        Err(e) => return params.iter().map(|_| Err(e.clone())).collect(),
    };
    let mut out: Vec<Option<Result<f64>>> = vec![None; params.len()];
    // group by step count so each lane group shares a loop trip count
    let mut pending: Vec<(u64, usize)> = Vec::with_capacity(params.len());
    for (i, p) in params.iter().enumerate() {
        match p.validate().map(|()| scheme(p, base)) {
            Ok(Scheme::Rk4(n)) => pending.push((n, i)),
            Ok(Scheme::Ros2) => out[i] = Some(stiff_qoi(p)),
            Err(e) => out[i] = Some(Err(e)),
        }
    }
    pending.sort_unstable();
    for group in pending.chunk_by(|a, b| a.0 == b.0) {
        let n = group[0].0;
        let mut rest = group;
        while !rest.is_empty() {
            let take = match rest.len() {
                l if l >= 8 => 8,
                l if l >= 4 => 4,
                l if l >= 2 => 2,
                _ => 1,
            };
            let (chunk, tail) = rest.split_at(take);
            rest = tail;
            let idx: Vec<usize> = chunk.iter().map(|&(_, i)| i).collect();
            let results = match take {
                8 => qoi_lanes::<8>(params, &idx, n),
                4 => qoi_lanes::<4>(params, &idx, n),
                2 => qoi_lanes::<2>(params, &idx, n),
                _ => qoi_lanes::<1>(params, &idx, n),
            };
            for (&i, res) in idx.iter().zip(results) {
                out[i] = Some(res);
            }
        }
    }
    out.into_iter().map(|r| r.expect("every input is assigned")).collect()
}

fn stiff_qoi(p: &LvParams) -> Result<f64> {
    let f = Rhs::new(p);
    let h = 1.0 / MAX_RK4_STEPS_PER_DAY as f64;
    let (mut s, mut r) = (INITIAL_S, INITIAL_R);
    let mut total = 0.5 * (s + r);
    for day in 1..=OBSERVATION_DAYS {
        for _ in 0..MAX_RK4_STEPS_PER_DAY {
            ros2_step(&f, h, &mut s, &mut r);
        }
        if !(s.is_finite() && r.is_finite()) {
            return Err(diverged(p, day));
        }
        let w = if day == OBSERVATION_DAYS { 0.5 } else { 1.0 };
        total += w * (s + r);
    }
    Ok(total)
}

fn qoi_lanes<const LANES: usize>(params: &[LvParams], idx: &[usize], n: u64) -> Vec<Result<f64>> {
    debug_assert_eq!(idx.len(), LANES);
    let mut f = [Rhs::new(&params[idx[0]]); LANES];
    for (lane, &i) in idx.iter().enumerate() {
        f[lane] = Rhs::new(&params[i]);
    }
    let h = 1.0 / n as f64;
    let mut s = [INITIAL_S; LANES];
    let mut r = [INITIAL_R; LANES];
    let mut total = [0.5 * (INITIAL_S + INITIAL_R); LANES];
    let mut failed = [0u32; LANES];
    for day in 1..=OBSERVATION_DAYS {
        for _ in 0..n {
            for lane in 0..LANES {
                rk4_step(&f[lane], h, &mut s[lane], &mut r[lane]);
            }
        }
        let w = if day == OBSERVATION_DAYS { 0.5 } else { 1.0 };
        for lane in 0..LANES {
            total[lane] += w * (s[lane] + r[lane]);
            if failed[lane] == 0 && !(s[lane].is_finite() && r[lane].is_finite()) {
                failed[lane] = day;
            }
        }
    }
    (0..LANES)
        .map(|lane| {
            if failed[lane] != 0 {
                Err(diverged(&params[idx[lane]], failed[lane]))
            } else {
                Ok(total[lane])
            }
        })
        .collect()
}

/// The six-parameter model on `[0,1]^6` as a [`QoiModel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotkaVolterra {
    pub dt: f64,
}

impl Default for LotkaVolterra {
    fn default() -> Self {
        LotkaVolterra { dt: DEFAULT_DT }
    }
}

impl QoiModel for LotkaVolterra {
    fn name(&self) -> &str {
        "lotka-volterra"
    }

    fn dim(&self) -> usize {
        6
    }

    fn space(&self) -> ParameterSpace {
        ParameterSpace {
            names: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
            lower: vec![0.0; 6],
            upper: vec![1.0; 6],
        }
    }

    fn evaluate(&self, x: &[f64]) -> Result<f64> {
        lv_qoi_with_step(&LvParams::from_slice(x)?, self.dt)
    }

    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Vec<Result<f64>> {
        let mut parsed = Vec::with_capacity(xs.len());
        let mut errors = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            match LvParams::from_slice(x) {
                Ok(p) => parsed.push(p),
                Err(e) => {
                    // placeholder lane; its result is replaced below
                    parsed.push(LvParams::from_slice(&[0.5; 6]).expect("six values"));
                    errors.push((i, e));
                }
            }
        }
        let mut out = lv_qoi_batch(&parsed, self.dt);
        for (i, e) in errors {
            out[i] = Err(e);
        }
        out
    }
}
