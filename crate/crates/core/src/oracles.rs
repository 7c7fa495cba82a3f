//! Reference solutions that do not go through the implicit solver.
//!
//! * [`gaussian_reference`]: closed form of the linear case.
//! * [`explicit_march`]: forward-Euler member of the same scheme family,
//!   with a time step small enough to keep every update a convex combination.
//! * [`control_dp`]: backward induction over bang-bang volatility controls,
//!   optimizing the one-step expectation at every node and step.

use serde::Serialize;
use libm::erfc;

use crate::discretization::sigma_select;
use crate::error::ValidationError;
use crate::grid::{sample_initial, ExpectationMode, ProblemSpec, VolatilityBand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMethod {
    Gaussian,
    Explicit,
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub method: OracleMethod,
    pub t: f64,
    pub x: f64,
    pub value: f64,
    /// Spatial intervals used (0 for closed forms).
    pub intervals: usize,
    /// Time steps used (0 for closed forms).
    pub steps: usize,
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(x + sigma sqrt(t) Z <= 0) = Phi(-x / (sigma sqrt(t)))`.
pub fn gaussian_reference(t: f64, x: f64, sigma: f64) -> Result<f64, ValidationError> {
    if !(t.is_finite() && t > 0.0) {
        return Err(ValidationError::BadHorizon(t));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(ValidationError::Other(format!("sigma must be positive, got {sigma}")));
    }
    Ok(normal_cdf(-x / (sigma * t.sqrt())))
}

/// Number of explicit steps keeping `sigma_high^2 dt / h^2 <= 1/2`.
fn stable_step_count(horizon: f64, h: f64, band: VolatilityBand) -> usize {
    let s2 = band.high() * band.high();
    let mut steps = (2.0 * horizon * s2 / (h * h)).ceil().max(1.0) as usize;
    while s2 * (horizon / steps as f64) / (h * h) > 0.5 {
        steps += 1;
    }
    steps
}

/// Uniform re-gridding of `spec` with `intervals` cells and the explicit stable step.
fn explicit_spec(spec: &ProblemSpec, intervals: usize) -> Result<ProblemSpec, ValidationError> {
    let grid = spec.grid();
    if intervals < 2 {
        return Err(ValidationError::TooFewIntervals(intervals));
    }
    let h = (grid.right() - grid.left()) / intervals as f64;
    let steps = stable_step_count(grid.horizon(), h, spec.band());
    spec.with_uniform_grid(intervals, steps)
}

/// Forward-Euler march `u^{n+1} = u^n + alpha^n (u_{i+1}^n - 2 u_i^n + u_{i-1}^n)`
/// with `alpha` switched on the sign of the current curvature.
fn explicit_profile(spec: &ProblemSpec) -> Vec<f64> {
    let grid = spec.grid();
    let h = grid.nodes()[1] - grid.nodes()[0];
    let dt = grid.dt();
    let band = spec.band();
    let mode = spec.mode();
    let h2 = h * h;
    let mut u = sample_initial(spec).into_values();
    let mut next = u.clone();
    let last = u.len() - 1;
    for n in 0..grid.steps() {
        for i in 1..last {
            let d = u[i + 1] - 2.0 * u[i] + u[i - 1];
            let sigma = sigma_select(d / h2, band, mode);
            let a = sigma * sigma * dt / (2.0 * h2);
            next[i] = u[i] + a * d;
        }
        let (g, hb) = spec.boundary_values(grid.time(n + 1));
        next[0] = g;
        next[last] = hb;
        std::mem::swap(&mut u, &mut next);
    }
    u
}

fn value_at(spec: &ProblemSpec, profile: Vec<f64>, x: f64) -> Result<f64, ValidationError> {
    let field = crate::grid::SolutionField::new(spec.grid_handle().clone(), spec.grid().steps(), profile)?;
    field.evaluate_at(x)
}

/// Explicit monotone march on a uniform grid with `intervals` cells; value at `(T, x)`.
pub fn explicit_march(spec: &ProblemSpec, intervals: usize, x: f64) -> Result<OracleResult, ValidationError> {
    let ex = explicit_spec(spec, intervals)?;
    let profile = explicit_profile(&ex);
    Ok(OracleResult {
        method: OracleMethod::Explicit,
        t: ex.grid().horizon(),
        x,
        value: value_at(&ex, profile, x)?,
        intervals,
        steps: ex.grid().steps(),
    })
}

/// One backward-induction step: at each interior node choose the control
/// among `weights` (the `sigma^2 dt / (2 h^2)` of each admissible volatility)
/// that maximizes (sublinear) or minimizes (superlinear) the one-step
/// expectation `v_i + w (v_{i+1} - 2 v_i + v_{i-1})`.
pub fn dp_backward_step(
    values: &[f64],
    weights: &[f64],
    mode: ExpectationMode,
    left: f64,
    right: f64,
    out: &mut Vec<f64>,
) {
    let last = values.len() - 1;
    out.clear();
    out.resize(values.len(), 0.0);
    for i in 1..last {
        let d = values[i + 1] - 2.0 * values[i] + values[i - 1];
        let mut candidates = weights.iter().map(|w| values[i] + w * d);
        let first = candidates.next().expect("at least one control");
        out[i] = match mode {
            ExpectationMode::Sublinear => candidates.fold(first, f64::max),
            ExpectationMode::Superlinear => candidates.fold(first, f64::min),
        };
    }
    out[0] = left;
    out[last] = right;
}

/// Dynamic program over the controls `{sigma_low, sigma_high}` on a uniform
/// grid with `intervals` cells; value at `(T, x)`.
pub fn control_dp(spec: &ProblemSpec, intervals: usize, x: f64) -> Result<OracleResult, ValidationError> {
    let dp = explicit_spec(spec, intervals)?;
    let grid = dp.grid();
    let h = grid.nodes()[1] - grid.nodes()[0];
    let dt = grid.dt();
    let band = dp.band();
    let weights: Vec<f64> = [band.low(), band.high()]
        .iter()
        .map(|s| s * s * dt / (2.0 * h * h))
        .collect();
    let mut v = sample_initial(&dp).into_values();
    let mut next = Vec::with_capacity(v.len());
    for n in 0..grid.steps() {
        let (g, hb) = dp.boundary_values(grid.time(n + 1));
        dp_backward_step(&v, &weights, dp.mode(), g, hb, &mut next);
        std::mem::swap(&mut v, &mut next);
    }
    Ok(OracleResult {
        method: OracleMethod::Dp,
        t: grid.horizon(),
        x,
        value: value_at(&dp, v, x)?,
        intervals,
        steps: grid.steps(),
    })
}
