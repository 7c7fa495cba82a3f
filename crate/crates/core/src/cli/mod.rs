//! Command implementations behind the `gheat` binary.
//!
//! Every command reads a [`RunConfig`], writes an optional CSV and a JSON
//! report (to the configured path, or to the supplied writer when none is
//! configured). Numeric outputs are deterministic; timings go to stderr.

pub mod config;

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::refine_study;
use crate::error::{SolverError, ValidationError};
use crate::grid::{ExpectationMode, InitialCondition, SolutionField, VolatilityBand};
use crate::oracles::{control_dp, explicit_march, gaussian_reference, OracleMethod, OracleResult};
use crate::solver::{march, MarchOutcome, NewtonReport};

pub use config::{RunConfig, CONFIG_SCHEMA};

pub const REPORT_SCHEMA: &str = "gheat-report/1";

/// Slack on the discrete maximum-principle check reported in JSON.
pub const MAX_PRINCIPLE_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(#[from] ValidationError),
    #[error("solver failure: {0}")]
    Solver(SolverError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Validation(v) => Self::Validation(v),
            other => Self::Solver(other),
        }
    }
}

impl CliError {
    /// 1 for invalid input, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) | Self::Io { .. } => 1,
            Self::Solver(_) => 2,
        }
    }
}

/// Full round-trip precision, 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Serialize)]
struct Probe {
    t: f64,
    x: f64,
    value: f64,
}

#[derive(Debug, Serialize)]
struct NewtonSummary {
    max_iterations_seen: usize,
    total_steps: usize,
    monotonicity_violation_max: f64,
    total_policy_switches: usize,
}

impl From<&NewtonReport> for NewtonSummary {
    fn from(r: &NewtonReport) -> Self {
        Self {
            max_iterations_seen: r.max_iterations_seen(),
            total_steps: r.total_steps(),
            monotonicity_violation_max: r.monotonicity_violation_max(),
            total_policy_switches: r.total_policy_switches(),
        }
    }
}

#[derive(Debug, Serialize)]
struct SolveReport<'a> {
    schema_version: &'static str,
    config_schema: &'static str,
    command: &'static str,
    problem: &'a config::ProblemBlock,
    numerics: &'a config::NumericsBlock,
    probes: Vec<Probe>,
    newton: NewtonSummary,
    max_principle_ok: bool,
    max_principle_violation: f64,
}

#[derive(Debug, Serialize)]
struct CompareProbe {
    t: f64,
    x: f64,
    u_nonlinear: f64,
    u_linear: f64,
    gaussian_reference: f64,
}

#[derive(Debug, Serialize)]
struct CompareReport<'a> {
    schema_version: &'static str,
    config_schema: &'static str,
    command: &'static str,
    problem: &'a config::ProblemBlock,
    numerics: &'a config::NumericsBlock,
    linear_sigma: f64,
    probes: Vec<CompareProbe>,
    newton: NewtonSummary,
    newton_linear: NewtonSummary,
    max_principle_ok: bool,
}

#[derive(Debug, Serialize)]
struct RefineRow {
    intervals: usize,
    steps: usize,
    value: f64,
    delta: Option<f64>,
}

#[derive(Debug, Serialize)]
struct RefineReport<'a> {
    schema_version: &'static str,
    config_schema: &'static str,
    command: &'static str,
    problem: &'a config::ProblemBlock,
    probe: Probe,
    rows: Vec<RefineRow>,
    non_divergent: bool,
    deltas_decreasing: bool,
}

#[derive(Debug, Serialize)]
struct OracleReport<'a> {
    schema_version: &'static str,
    config_schema: &'static str,
    command: &'static str,
    problem: &'a config::ProblemBlock,
    results: Vec<OracleResult>,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit_json<T: Serialize>(cfg: &RunConfig, report: &T, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| ValidationError::Other(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    match &cfg.output.json {
        Some(p) => write_file(&cfg.resolve(p), &text),
        None => stdout.write_all(text.as_bytes()).map_err(|source| CliError::Io {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn emit_csv(cfg: &RunConfig, text: &str) -> Result<(), CliError> {
    match &cfg.output.csv {
        Some(p) => write_file(&cfg.resolve(p), text),
        None => Ok(()),
    }
}

fn probes_at(cfg: &RunConfig, field: &SolutionField) -> Result<Vec<Probe>, CliError> {
    cfg.output
        .probes
        .iter()
        .map(|&x| {
            Ok(Probe {
                t: field.time(),
                x,
                value: field.evaluate_at(x)?,
            })
        })
        .collect()
}

fn timed_march(spec: &crate::grid::ProblemSpec, cfg: &crate::solver::SolverConfig, label: &str) -> Result<MarchOutcome, CliError> {
    let start = Instant::now();
    let out = march(spec, cfg)?;
    eprintln!("{label}: marched in {:.3} s", start.elapsed().as_secs_f64());
    Ok(out)
}

/// `solve`: profile at `t = T` plus probe values and Newton statistics.
pub fn cmd_solve(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.problem_spec()?;
    let out = timed_march(&spec, &cfg.solver_config()?, "solve")?;

    let mut csv = String::from("x,u\n");
    for (x, u) in spec.grid().nodes().iter().zip(out.field.values()) {
        let _ = writeln!(csv, "{},{}", fmt_f64(*x), fmt_f64(*u));
    }
    emit_csv(cfg, &csv)?;

    let report = SolveReport {
        schema_version: REPORT_SCHEMA,
        config_schema: CONFIG_SCHEMA,
        command: "solve",
        problem: &cfg.problem,
        numerics: &cfg.numerics,
        probes: probes_at(cfg, &out.field)?,
        newton: (&out.report).into(),
        max_principle_ok: out.max_principle_ok(MAX_PRINCIPLE_SLACK),
        max_principle_violation: out.max_principle_violation,
    };
    emit_json(cfg, &report, stdout)
}

fn indicator_threshold(cfg: &RunConfig) -> Result<f64, CliError> {
    match cfg.problem_spec()?.initial() {
        InitialCondition::IndicatorLeq(y) => Ok(*y),
        _ => Err(ValidationError::Other(
            "this command needs an indicator_leq initial condition for the Gaussian reference".into(),
        )
        .into()),
    }
}

/// `compare`: the configured (nonlinear) problem next to its linear
/// counterpart at `sigma = sigma_high` and the closed-form Gaussian value.
pub fn cmd_compare(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.problem_spec()?;
    let threshold = indicator_threshold(cfg)?;
    let sigma = spec.band().high();
    let linear_spec = spec
        .with_band(VolatilityBand::linear(sigma)?)
        .with_mode(ExpectationMode::Sublinear);
    let solver = cfg.solver_config()?;
    let nonlinear = timed_march(&spec, &solver, "compare/nonlinear")?;
    let linear = timed_march(&linear_spec, &solver, "compare/linear")?;
    let horizon = spec.grid().horizon();
    let gaussian = |x: f64| gaussian_reference(horizon, x - threshold, sigma);

    let mut csv = String::from("x,u_nonlinear,u_linear,gaussian_reference\n");
    for ((x, u), v) in spec
        .grid()
        .nodes()
        .iter()
        .zip(nonlinear.field.values())
        .zip(linear.field.values())
    {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            fmt_f64(*x),
            fmt_f64(*u),
            fmt_f64(*v),
            fmt_f64(gaussian(*x)?)
        );
    }
    emit_csv(cfg, &csv)?;

    let probes = cfg
        .output
        .probes
        .iter()
        .map(|&x| {
            Ok(CompareProbe {
                t: horizon,
                x,
                u_nonlinear: nonlinear.field.evaluate_at(x)?,
                u_linear: linear.field.evaluate_at(x)?,
                gaussian_reference: gaussian(x)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = CompareReport {
        schema_version: REPORT_SCHEMA,
        config_schema: CONFIG_SCHEMA,
        command: "compare",
        problem: &cfg.problem,
        numerics: &cfg.numerics,
        linear_sigma: sigma,
        probes,
        newton: (&nonlinear.report).into(),
        newton_linear: (&linear.report).into(),
        max_principle_ok: nonlinear.max_principle_ok(MAX_PRINCIPLE_SLACK)
            && linear.max_principle_ok(MAX_PRINCIPLE_SLACK),
    };
    emit_json(cfg, &report, stdout)
}

/// Parse `m0xN0,m1xN1,...`.
pub fn parse_levels(text: &str) -> Result<Vec<(usize, usize)>, ValidationError> {
    text.split(',')
        .map(|item| {
            let item = item.trim();
            let (m, n) = item
                .split_once(['x', 'X'])
                .ok_or_else(|| ValidationError::Other(format!("level {item:?} is not of the form MxN")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| ValidationError::Other(format!("level {item:?} is not of the form MxN")))
            };
            Ok((parse(m)?, parse(n)?))
        })
        .collect()
}

/// `refine`: refinement table at `(T, x)`, `x` the first configured probe (0 by default).
pub fn cmd_refine(cfg: &RunConfig, levels: &[(usize, usize)], stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.problem_spec()?;
    let x = cfg.output.probes.first().copied().unwrap_or(0.0);
    let t = spec.grid().horizon();
    let table = refine_study(&spec, (t, x), levels, &cfg.solver_config()?)?;
    for row in &table.rows {
        eprintln!("refine: {}x{} in {:.3} s", row.intervals, row.steps, row.runtime_seconds);
    }

    let mut csv = String::from("intervals,steps,value,delta\n");
    for row in &table.rows {
        let delta = row.delta.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", row.intervals, row.steps, fmt_f64(row.value), delta);
    }
    emit_csv(cfg, &csv)?;

    let report = RefineReport {
        schema_version: REPORT_SCHEMA,
        config_schema: CONFIG_SCHEMA,
        command: "refine",
        problem: &cfg.problem,
        probe: Probe {
            t,
            x,
            value: table.last_value(),
        },
        non_divergent: table.is_non_divergent(),
        deltas_decreasing: table.deltas_decreasing(),
        rows: table
            .rows
            .iter()
            .map(|r| RefineRow {
                intervals: r.intervals,
                steps: r.steps,
                value: r.value,
                delta: r.delta,
            })
            .collect(),
    };
    emit_json(cfg, &report, stdout)
}

/// `oracle`: one reference method at every probe (x = 0 when none configured).
///
/// The Gaussian reference is the linear solution at `sigma = sigma_high`
/// for an `indicator_leq` initial condition, exact only for a degenerate band.
pub fn cmd_oracle(cfg: &RunConfig, method: OracleMethod, stdout: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.problem_spec()?;
    let probes = if cfg.output.probes.is_empty() {
        vec![0.0]
    } else {
        cfg.output.probes.clone()
    };
    let intervals = cfg.numerics.intervals;
    let horizon = spec.grid().horizon();
    let results = match method {
        OracleMethod::Gaussian => {
            let threshold = indicator_threshold(cfg)?;
            probes
                .iter()
                .map(|&x| {
                    Ok(OracleResult {
                        method,
                        t: horizon,
                        x,
                        value: gaussian_reference(horizon, x - threshold, spec.band().high())?,
                        intervals: 0,
                        steps: 0,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?
        }
        OracleMethod::Explicit => probes
            .iter()
            .map(|&x| explicit_march(&spec, intervals, x))
            .collect::<Result<Vec<_>, _>>()?,
        OracleMethod::Dp => probes
            .iter()
            .map(|&x| control_dp(&spec, intervals, x))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let report = OracleReport {
        schema_version: REPORT_SCHEMA,
        config_schema: CONFIG_SCHEMA,
        command: "oracle",
        problem: &cfg.problem,
        results,
    };
    emit_json(cfg, &report, stdout)
}
