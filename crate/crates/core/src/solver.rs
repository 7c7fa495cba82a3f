//! Policy (Newton) iteration for one implicit step and the time march.
//!
//! Each step starts from the previous level, freezes the volatility branch
//! at every interior node from the current iterate's curvature, solves the
//! resulting M-matrix system and repeats. In sublinear mode the iterates
//! after the first solve are componentwise non-decreasing; superlinear mode
//! mirrors this with non-increasing iterates.

use serde::Serialize;

use crate::discretization::{fill_system, select_policy, SigmaPolicy, TridiagonalSystem};
use crate::error::{SolverError, ValidationError};
use crate::grid::{sample_initial, ExpectationMode, ProblemSpec, SolutionField};

/// Solve a tridiagonal system with the Thomas algorithm.
pub fn tridiag_solve(system: &TridiagonalSystem) -> Result<Vec<f64>, SolverError> {
    let n = system.len();
    let (a, b, c, d) = (&system.lower, &system.diag, &system.upper, &system.rhs);
    let mut cp = vec![0.0; n];
    let mut x = vec![0.0; n];
    if n == 0 {
        return Ok(x);
    }
    let mut pivot = b[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(SolverError::ZeroPivot { row: 0 });
    }
    cp[0] = c[0] / pivot;
    x[0] = d[0] / pivot;
    for i in 1..n {
        pivot = b[i] - a[i] * cp[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(SolverError::ZeroPivot { row: i });
        }
        cp[i] = c[i] / pivot;
        x[i] = (d[i] - a[i] * x[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative-absolute stopping tolerance on the iterate update.
    pub tolerance: f64,
    /// Linear solves allowed per time step.
    pub max_iterations: usize,
    /// Keep per-iteration records in the step reports.
    pub record_trace: bool,
    /// Keep every time level in the march outcome.
    pub keep_levels: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 50,
            record_trace: false,
            keep_levels: false,
        }
    }
}

impl SolverConfig {
    pub fn new(tolerance: f64, max_iterations: usize) -> Result<Self, ValidationError> {
        let cfg = Self {
            tolerance,
            max_iterations,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(ValidationError::Other(format!(
                "newton tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations < 1 {
            return Err(ValidationError::Other(
                "max newton iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub update_norm: f64,
    pub policy_switches: usize,
    /// Wrong-direction movement of this iterate relative to the previous one;
    /// only meaningful from the second solve on.
    pub monotonicity_violation: f64,
}

/// Summary of the policy iteration at one time step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    /// Index of the new time level.
    pub time_index: usize,
    pub iterations: usize,
    /// Update norm of the last iteration.
    pub update_norm: f64,
    /// Policy switches summed over all iterations.
    pub policy_switches: usize,
    /// Largest wrong-direction step among iterates `k >= 1`.
    pub monotonicity_violation: f64,
    /// True when the final policy reproduced itself.
    pub policy_stable: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<IterationRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct NewtonReport {
    pub steps: Vec<StepReport>,
}

impl NewtonReport {
    pub fn max_iterations_seen(&self) -> usize {
        self.steps.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn total_steps(&self) -> usize {
        self.steps.len()
    }

    pub fn monotonicity_violation_max(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.monotonicity_violation)
            .fold(0.0, f64::max)
    }

    pub fn total_policy_switches(&self) -> usize {
        self.steps.iter().map(|s| s.policy_switches).sum()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One implicit step from `prev`, starting the iteration at `prev` itself.
pub fn newton_step(
    prev: &SolutionField,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<(SolutionField, StepReport), SolverError> {
    newton_step_from(prev, prev.values(), spec, cfg)
}

/// One implicit step from `prev` with an arbitrary first iterate.
pub fn newton_step_from(
    prev: &SolutionField,
    first_iterate: &[f64],
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<(SolutionField, StepReport), SolverError> {
    cfg.validate()?;
    let grid = spec.grid_handle();
    if !prev.same_grid(grid) || first_iterate.len() != grid.len() {
        return Err(ValidationError::GridMismatch.into());
    }
    let time_index = prev.time_index() + 1;
    if time_index > grid.steps() {
        return Err(ValidationError::Other(format!(
            "time index {time_index} beyond the last level {}",
            grid.steps()
        ))
        .into());
    }
    let t_new = grid.time(time_index);
    let nodes = grid.nodes();
    let band = spec.band();
    let mode = spec.mode();

    let mut iterate = first_iterate.to_vec();
    let mut policy = SigmaPolicy::default();
    let mut next_policy = SigmaPolicy::default();
    let mut system = TridiagonalSystem::with_len(grid.len());
    select_policy(&iterate, nodes, mode, &mut policy);

    let mut report = StepReport {
        time_index,
        iterations: 0,
        update_norm: f64::INFINITY,
        policy_switches: 0,
        monotonicity_violation: 0.0,
        policy_stable: false,
        trace: Vec::new(),
    };
    let mut last_switching = Vec::new();

    for k in 0..cfg.max_iterations {
        fill_system(&policy, prev.values(), spec, t_new, &mut system);
        let next = tridiag_solve(&system)?;

        let update = max_abs_diff(&next, &iterate);
        let violation = if k >= 1 {
            let worst = iterate
                .iter()
                .zip(&next)
                .map(|(old, new)| match mode {
                    ExpectationMode::Sublinear => old - new,
                    ExpectationMode::Superlinear => new - old,
                })
                .fold(0.0, f64::max);
            worst.max(0.0)
        } else {
            0.0
        };

        select_policy(&next, nodes, mode, &mut next_policy);
        last_switching = policy.differing_nodes(&next_policy, band);
        let switches = last_switching.len();
        let scale = next.iter().fold(1.0_f64, |m, v| m.max(v.abs()));

        report.iterations = k + 1;
        report.update_norm = update;
        report.policy_switches += switches;
        report.monotonicity_violation = report.monotonicity_violation.max(violation);
        if cfg.record_trace {
            report.trace.push(IterationRecord {
                update_norm: update,
                policy_switches: switches,
                monotonicity_violation: violation,
            });
        }
        iterate = next;

        if switches == 0 {
            report.policy_stable = true;
            return Ok((SolutionField::new(grid.clone(), time_index, iterate)?, report));
        }
        if update < cfg.tolerance * scale {
            return Ok((SolutionField::new(grid.clone(), time_index, iterate)?, report));
        }
        std::mem::swap(&mut policy, &mut next_policy);
    }

    Err(SolverError::NonConvergence {
        time_index,
        iterations: cfg.max_iterations,
        oscillating_nodes: last_switching,
    })
}

/// Result of marching from `t = 0` to `t = T`.
#[derive(Debug, Clone)]
pub struct MarchOutcome {
    pub field: SolutionField,
    pub report: NewtonReport,
    /// All levels `0..=N` when requested.
    pub levels: Option<Vec<SolutionField>>,
    /// Largest excursion of any new level outside
    /// `[min(U^n, g, h), max(U^n, g, h)]`, with boundary data at the new time.
    pub max_principle_violation: f64,
}

impl MarchOutcome {
    pub fn max_principle_ok(&self, slack: f64) -> bool {
        self.max_principle_violation <= slack
    }
}

fn max_principle_excursion(prev: &[f64], next: &[f64], g: f64, h: f64) -> f64 {
    let lo = prev.iter().fold(g.min(h), |m, &v| m.min(v));
    let hi = prev.iter().fold(g.max(h), |m, &v| m.max(v));
    next.iter()
        .map(|&v| (lo - v).max(v - hi))
        .fold(0.0, f64::max)
}

/// March the implicit scheme over all `N` time steps.
pub fn march(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<MarchOutcome, SolverError> {
    cfg.validate()?;
    let grid = spec.grid();
    let mut field = sample_initial(spec);
    let mut report = NewtonReport {
        steps: Vec::with_capacity(grid.steps()),
    };
    let mut levels = cfg.keep_levels.then(|| vec![field.clone()]);
    let mut excursion = 0.0_f64;

    for n in 0..grid.steps() {
        let (next, step) = newton_step(&field, spec, cfg)?;
        let (g, h) = spec.boundary_values(grid.time(n + 1));
        excursion = excursion.max(max_principle_excursion(field.values(), next.values(), g, h));
        report.steps.push(step);
        if let Some(levels) = levels.as_mut() {
            levels.push(next.clone());
        }
        field = next;
    }

    Ok(MarchOutcome {
        field,
        report,
        levels,
        max_principle_violation: excursion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::SigmaChoice;
    use crate::grid::{build_uniform_grid, Boundary, InitialCondition, VolatilityBand};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[allow(clippy::too_many_arguments)]
    fn spec(
        a: f64,
        b: f64,
        m: usize,
        n: usize,
        t: f64,
        band: (f64, f64),
        initial: InitialCondition,
        g: f64,
        h: f64,
    ) -> ProblemSpec {
        ProblemSpec::new(
            build_uniform_grid(a, b, m, n, t).unwrap(),
            VolatilityBand::new(band.0, band.1).unwrap(),
            ExpectationMode::Sublinear,
            initial,
            Boundary::Constant(g),
            Boundary::Constant(h),
        )
        .unwrap()
    }

    #[test]
    fn identity_system_returns_rhs() {
        let mut sys = TridiagonalSystem::with_len(5);
        sys.rhs = vec![1.0, -2.0, 3.5, 0.0, 9.0];
        assert_eq!(tridiag_solve(&sys).unwrap(), sys.rhs);
    }

    #[test]
    fn three_node_solve() {
        let sys = TridiagonalSystem {
            lower: vec![0.0, -0.0125, 0.0],
            diag: vec![1.0, 1.025, 1.0],
            upper: vec![0.0, -0.0125, 0.0],
            rhs: vec![1.0, 1.0, 0.0],
        };
        let u = tridiag_solve(&sys).unwrap();
        assert_eq!(u[0], 1.0);
        assert!((u[1] - 1.0125 / 1.025).abs() < 1e-15);
        assert!((u[1] - 0.987_804_878_048_780_5).abs() < 1e-15);
        assert_eq!(u[2], 0.0);
    }

    #[test]
    fn random_dominant_systems_multiply_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..60);
            let mut sys = TridiagonalSystem::with_len(n);
            for i in 0..n {
                sys.lower[i] = if i > 0 { rng.gen_range(-5.0..5.0) } else { 0.0 };
                sys.upper[i] = if i + 1 < n { rng.gen_range(-5.0..5.0) } else { 0.0 };
                sys.diag[i] = (sys.lower[i].abs() + sys.upper[i].abs() + rng.gen_range(0.01..3.0))
                    * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sys.rhs[i] = rng.gen_range(-100.0..100.0);
            }
            let u = tridiag_solve(&sys).unwrap();
            let back = sys.apply(&u);
            let rhs_norm = sys.rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(max_abs_diff(&back, &sys.rhs) <= 1e-12 * (1.0 + rhs_norm));
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut sys = TridiagonalSystem::with_len(3);
        sys.diag[1] = 0.0;
        assert_eq!(tridiag_solve(&sys), Err(SolverError::ZeroPivot { row: 1 }));
    }

    #[test]
    fn three_node_newton_step() {
        let s = spec(-1.0, 1.0, 2, 1, 0.1, (0.5, 1.0), InitialCondition::IndicatorLeq(0.0), 1.0, 0.0);
        let prev = sample_initial(&s);
        let cfg = SolverConfig {
            record_trace: true,
            ..SolverConfig::default()
        };
        let (next, report) = newton_step(&prev, &s, &cfg).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.policy_stable);
        assert_eq!(report.policy_switches, 0);
        assert_eq!(next.values()[0], 1.0);
        assert_eq!(next.values()[2], 0.0);
        assert!((next.values()[1] - 0.987_804_878_048_780_5).abs() < 1e-15);
        assert_eq!(next.time_index(), 1);
        let mut policy = SigmaPolicy::default();
        select_policy(next.values(), s.grid().nodes(), s.mode(), &mut policy);
        assert_eq!(policy.choices(), &[SigmaChoice::Low]);
    }

    #[test]
    fn linear_band_converges_in_one_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..41).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = spec(0.0, 2.0, 40, 5, 0.5, (0.8, 0.8), InitialCondition::Tabulated(values), 0.3, -0.2);
        let out = march(&s, &SolverConfig::default()).unwrap();
        assert!(out.report.steps.iter().all(|st| st.iterations == 1));
    }

    #[test]
    fn constant_state_is_stationary() {
        let c = 0.37;
        let s = spec(-2.0, 3.0, 25, 10, 1.0, (0.3, 1.4), InitialCondition::custom(move |_| c), c, c);
        let out = march(&s, &SolverConfig::default()).unwrap();
        assert!(out.field.values().iter().all(|&v| (v - c).abs() < 1e-14));
    }

    #[test]
    fn zero_problem_stays_zero() {
        let s = spec(-1.0, 1.0, 20, 10, 1.0, (0.5, 1.0), InitialCondition::custom(|_| 0.0), 0.0, 0.0);
        let out = march(&s, &SolverConfig::default()).unwrap();
        assert!(out.field.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_entries_follow_new_time() {
        let grid = build_uniform_grid(0.0, 1.0, 10, 4, 1.0).unwrap();
        let s = ProblemSpec::new(
            grid,
            VolatilityBand::new(0.5, 1.0).unwrap(),
            ExpectationMode::Sublinear,
            InitialCondition::custom(|x| x * x),
            Boundary::function(|t| t * 2.0),
            Boundary::function(|t| 1.0 - t),
        )
        .unwrap();
        let cfg = SolverConfig {
            keep_levels: true,
            ..SolverConfig::default()
        };
        let out = march(&s, &cfg).unwrap();
        let levels = out.levels.unwrap();
        assert_eq!(levels.len(), 5);
        for (n, level) in levels.iter().enumerate().skip(1) {
            let t = s.grid().time(n);
            assert_eq!(level.values()[0], 2.0 * t);
            assert_eq!(level.values()[10], 1.0 - t);
        }
    }

    #[test]
    fn unique_fixed_point_from_other_starts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..61).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = spec(-3.0, 3.0, 60, 4, 0.4, (0.3, 1.2), InitialCondition::Tabulated(values), 0.5, -0.5);
        let prev = sample_initial(&s);
        let cfg = SolverConfig::default();
        let (reference, _) = newton_step(&prev, &s, &cfg).unwrap();
        for _ in 0..20 {
            let start: Vec<f64> = (0..61).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (other, _) = newton_step_from(&prev, &start, &s, &cfg).unwrap();
            assert!(max_abs_diff(reference.values(), other.values()) < 1e-10);
        }
    }

    #[test]
    fn exhausted_budget_reports_switching_nodes() {
        let s = spec(-1.0, 1.0, 40, 2, 1.0, (0.2, 2.0), InitialCondition::IndicatorLeq(0.0), 1.0, 0.0);
        let cfg = SolverConfig {
            max_iterations: 1,
            tolerance: 1e-300,
            ..SolverConfig::default()
        };
        match march(&s, &cfg) {
            Err(SolverError::NonConvergence {
                time_index,
                iterations,
                oscillating_nodes,
            }) => {
                assert_eq!(time_index, 1);
                assert_eq!(iterations, 1);
                assert!(!oscillating_nodes.is_empty());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::new(0.0, 5).is_err());
        assert!(SolverConfig::new(1e-6, 0).is_err());
        assert!(SolverConfig::new(1e-6, 1).is_ok());
    }
}
