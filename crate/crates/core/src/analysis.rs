//! Experiment drivers built on the solver: grid refinement, the mollifier
//! family, and randomized property suites.
//!
//! Independent marches run on the rayon pool; results are collected in input
//! order so tables do not depend on scheduling.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::discretization::{monotonicity_probe, NodeGeometry, Perturbation, ProbeState};
use crate::error::{SolverError, ValidationError};
use crate::grid::{
    build_uniform_grid, Boundary, ExpectationMode, Grid1D, InitialCondition, ProblemSpec,
    VolatilityBand,
};
use crate::solver::{march, SolverConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRow {
    pub intervals: usize,
    pub steps: usize,
    pub value: f64,
    /// `|v_k - v_{k-1}|`, absent on the first row.
    pub delta: Option<f64>,
    /// Wall-clock seconds; informational only.
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTable {
    pub probe_t: f64,
    pub probe_x: f64,
    pub rows: Vec<RefinementRow>,
}

impl RefinementTable {
    pub fn deltas(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.delta).collect()
    }

    /// Last delta no larger than the first.
    pub fn is_non_divergent(&self) -> bool {
        let d = self.deltas();
        match (d.first(), d.last()) {
            (Some(first), Some(last)) => last <= first,
            _ => true,
        }
    }

    pub fn deltas_decreasing(&self) -> bool {
        self.deltas().windows(2).all(|w| w[1] <= w[0])
    }

    pub fn last_value(&self) -> f64 {
        self.rows.last().map(|r| r.value).unwrap_or(f64::NAN)
    }
}

/// Solve `spec` at each `(intervals, steps)` level over `[0, t]` on a uniform
/// grid of the same domain and report the value at `(t, x)`.
pub fn refine_study(
    spec: &ProblemSpec,
    probe: (f64, f64),
    levels: &[(usize, usize)],
    cfg: &SolverConfig,
) -> Result<RefinementTable, SolverError> {
    if levels.len() < 3 {
        return Err(ValidationError::Other(format!(
            "a refinement study needs at least 3 levels, got {}",
            levels.len()
        ))
        .into());
    }
    if levels.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1) {
        return Err(ValidationError::Other(
            "refinement levels must strictly increase in both intervals and steps".into(),
        )
        .into());
    }
    let (t, x) = probe;
    let grid = spec.grid();
    let runs: Vec<Result<(f64, f64), SolverError>> = levels
        .par_iter()
        .map(|&(m, n)| {
            let start = Instant::now();
            let level = spec.with_grid(build_uniform_grid(grid.left(), grid.right(), m, n, t)?)?;
            let out = march(&level, cfg)?;
            let value = out.field.evaluate_at(x)?;
            Ok((value, start.elapsed().as_secs_f64()))
        })
        .collect();

    let mut rows: Vec<RefinementRow> = Vec::with_capacity(levels.len());
    for (&(intervals, steps), run) in levels.iter().zip(runs) {
        let (value, runtime_seconds) = run?;
        let delta = rows.last().map(|prev| (value - prev.value).abs());
        rows.push(RefinementRow {
            intervals,
            steps,
            value,
            delta,
            runtime_seconds,
        });
    }
    Ok(RefinementTable {
        probe_t: t,
        probe_x: x,
        rows,
    })
}

/// `count` levels, doubling intervals and steps together from the first.
pub fn doubling_levels(intervals: usize, steps: usize, count: usize) -> Vec<(usize, usize)> {
    (0..count)
        .map(|k| (intervals << k, steps << k))
        .collect()
}

/// Value at `(T, x)` for the smoothed initial data `phi_n`, one march per `n`.
pub fn mollifier_study(
    base: &ProblemSpec,
    n_values: &[u32],
    x: f64,
    cfg: &SolverConfig,
) -> Result<Vec<(u32, f64)>, SolverError> {
    if n_values.is_empty() || n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ValidationError::Other("n-values must be non-empty and strictly increasing".into()).into());
    }
    n_values
        .par_iter()
        .map(|&n| {
            let spec = base.with_initial(InitialCondition::SmoothedIndicator(n))?;
            let out = march(&spec, cfg)?;
            Ok((n, out.field.evaluate_at(x)?))
        })
        .collect()
}

/// Largest amount by which `lower` exceeds `upper` at any node of any level.
/// Both specs must share grid, band and mode.
pub fn comparison_violation(
    upper: &ProblemSpec,
    lower: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<f64, SolverError> {
    if upper.grid() != lower.grid() || upper.band() != lower.band() || upper.mode() != lower.mode() {
        return Err(ValidationError::Other("compared problems must share grid, band and mode".into()).into());
    }
    let cfg = SolverConfig {
        keep_levels: true,
        ..*cfg
    };
    let a = march(upper, &cfg)?.levels.unwrap_or_default();
    let b = march(lower, &cfg)?.levels.unwrap_or_default();
    Ok(a.iter()
        .zip(&b)
        .flat_map(|(la, lb)| la.values().iter().zip(lb.values()).map(|(u, l)| l - u))
        .fold(0.0, f64::max))
}

/// Random bounded problem: random band and mode, uniform or stretched nodes,
/// random data in `[-1, 1]` and random (constant or time-varying) boundaries.
pub fn random_spec<R: Rng>(rng: &mut R) -> ProblemSpec {
    let low = rng.gen_range(0.05..1.5);
    let band = if rng.gen_bool(0.1) {
        VolatilityBand::linear(low)
    } else {
        VolatilityBand::new(low, low * rng.gen_range(1.0..4.0))
    }
    .expect("valid band");
    let mode = if rng.gen_bool(0.5) {
        ExpectationMode::Sublinear
    } else {
        ExpectationMode::Superlinear
    };
    let intervals = rng.gen_range(4..80);
    let steps = rng.gen_range(1..25);
    let horizon = rng.gen_range(0.01..3.0);
    let a = rng.gen_range(-5.0..0.0);
    let width = rng.gen_range(0.5..10.0);
    let grid = if rng.gen_bool(0.5) {
        build_uniform_grid(a, a + width, intervals, steps, horizon).expect("valid grid")
    } else {
        let mut nodes = Vec::with_capacity(intervals + 1);
        let mut x = a;
        nodes.push(x);
        for _ in 0..intervals {
            x += rng.gen_range(0.05..1.0) * width / intervals as f64;
            nodes.push(x);
        }
        Grid1D::from_nodes(nodes, steps, horizon).expect("valid grid")
    };

    let n = grid.len();
    let initial = match rng.gen_range(0..3) {
        0 => InitialCondition::Tabulated((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()),
        1 => {
            let y = rng.gen_range(grid.left()..grid.right());
            InitialCondition::IndicatorLeq(y)
        }
        _ => {
            let (amp, freq, phase) = (
                rng.gen_range(0.1..1.0),
                rng.gen_range(0.2..6.0),
                rng.gen_range(0.0..6.3),
            );
            InitialCondition::custom(move |x| amp * (freq * x + phase).sin())
        }
    };
    let boundary = |rng: &mut R| {
        let c = rng.gen_range(-1.0..1.0);
        if rng.gen_bool(0.5) {
            Boundary::Constant(c)
        } else {
            let slope = rng.gen_range(-0.5..0.5);
            Boundary::function(move |t| c + slope * t)
        }
    };
    let left = boundary(rng);
    let right = boundary(rng);
    ProblemSpec::new(grid, band, mode, initial, left, right).expect("valid random spec")
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PropertySuiteReport {
    pub specs: usize,
    pub steps: usize,
    pub max_iterations: usize,
    /// Worst wrong-direction Newton update over iterates `k >= 1`.
    pub max_monotonicity_violation: f64,
    /// Worst excursion outside the discrete maximum-principle bounds.
    pub max_principle_violation: f64,
}

/// March `count` random problems and collect the Newton and max-principle diagnostics.
pub fn newton_property_suite(seed: u64, count: usize, cfg: &SolverConfig) -> Result<PropertySuiteReport, SolverError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<ProblemSpec> = (0..count).map(|_| random_spec(&mut rng)).collect();
    let outcomes = specs
        .par_iter()
        .map(|s| march(s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(outcomes.iter().fold(
        PropertySuiteReport {
            specs: count,
            ..Default::default()
        },
        |acc, out| PropertySuiteReport {
            specs: acc.specs,
            steps: acc.steps + out.report.total_steps(),
            max_iterations: acc.max_iterations.max(out.report.max_iterations_seen()),
            max_monotonicity_violation: acc
                .max_monotonicity_violation
                .max(out.report.monotonicity_violation_max()),
            max_principle_violation: acc.max_principle_violation.max(out.max_principle_violation),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ProbeSuiteReport {
    pub trials: usize,
    /// Worst decrease of the residual after raising neighbours / previous value.
    pub max_neighbor_violation: f64,
    /// Worst increase of the residual after raising the node's own value.
    pub max_own_violation: f64,
}

/// Random states, geometries, time steps and perturbations through
/// [`monotonicity_probe`].
pub fn probe_suite(seed: u64, trials: usize) -> ProbeSuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ProbeSuiteReport {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let low = rng.gen_range(0.01..2.0);
        let band = VolatilityBand::new(low, low * rng.gen_range(1.0..5.0)).expect("valid band");
        let mode = if rng.gen_bool(0.5) {
            ExpectationMode::Sublinear
        } else {
            ExpectationMode::Superlinear
        };
        let mid = rng.gen_range(-1.0..1.0);
        let hl = 10f64.powf(rng.gen_range(-3.0..0.5));
        let hr = 10f64.powf(rng.gen_range(-3.0..0.5));
        let geom = NodeGeometry::new(mid - hl, mid, mid + hr).expect("valid geometry");
        let dt = 10f64.powf(rng.gen_range(-5.0..0.5));
        let value = |rng: &mut ChaCha8Rng| {
            if rng.gen_bool(0.1) {
                0.5
            } else {
                rng.gen_range(-1.0..1.0)
            }
        };
        let state = ProbeState {
            u_prev: value(&mut rng),
            u_left: value(&mut rng),
            u_mid: value(&mut rng),
            u_right: value(&mut rng),
            geom,
            dt,
            band,
            mode,
        };
        let eps = |rng: &mut ChaCha8Rng| match rng.gen_range(0..4) {
            0 => 0.0,
            1 => rng.gen_range(0.0..1e-8),
            _ => rng.gen_range(0.0..1.0),
        };
        let pert = Perturbation {
            right: eps(&mut rng),
            left: eps(&mut rng),
            prev: eps(&mut rng),
            mid: eps(&mut rng),
        };
        let out = monotonicity_probe(state, pert).expect("non-negative perturbation");
        report.max_neighbor_violation = report.max_neighbor_violation.max(out.neighbor_violation());
        report.max_own_violation = report.max_own_violation.max(out.own_violation());
    }
    report
}

/// Max-norm of `march(superlinear, phi, g, h) + march(sublinear, -phi, -g, -h)`
/// over `count` random problems, final level.
pub fn duality_suite(seed: u64, count: usize, cfg: &SolverConfig) -> Result<f64, SolverError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<ProblemSpec> = (0..count).map(|_| random_spec(&mut rng)).collect();
    let gaps = specs
        .par_iter()
        .map(|s| {
            let sup = s.with_mode(ExpectationMode::Superlinear);
            let sub = s.with_mode(ExpectationMode::Sublinear).negated_data();
            let a = march(&sup, cfg)?;
            let b = march(&sub, cfg)?;
            Ok(a.field
                .values()
                .iter()
                .zip(b.field.values())
                .map(|(u, v)| (u + v).abs())
                .fold(0.0, f64::max))
        })
        .collect::<Result<Vec<f64>, SolverError>>()?;
    Ok(gaps.into_iter().fold(0.0, f64::max))
}
