//! Discretization geometry and problem definition.
//!
//! A [`ProblemSpec`] bundles everything needed to march the G-heat equation
//! on a bounded interval: the space-time grid, the volatility band, whether
//! the upper (sublinear) or lower (superlinear) expectation is wanted, the
//! initial profile and the two Dirichlet boundary functions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;

/// Spatial nodes `x_0 < x_1 < ... < x_m` plus a uniform partition of `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    nodes: Vec<f64>,
    steps: usize,
    horizon: f64,
}

impl Grid1D {
    /// Build a grid from explicit (possibly non-uniform) nodes.
    pub fn from_nodes(nodes: Vec<f64>, steps: usize, horizon: f64) -> Result<Self, ValidationError> {
        if nodes.len() < 3 {
            return Err(ValidationError::TooFewIntervals(nodes.len().saturating_sub(1)));
        }
        if let Some(i) = nodes.iter().position(|x| !x.is_finite()) {
            return Err(ValidationError::NodesNotIncreasing(i));
        }
        if let Some(i) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(ValidationError::NodesNotIncreasing(i + 1));
        }
        if steps < 1 {
            return Err(ValidationError::NoTimeSteps);
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ValidationError::BadHorizon(horizon));
        }
        Ok(Self { nodes, steps, horizon })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Index of the last node; the grid has `intervals() + 1` nodes.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Time of level `n`; level `steps` is exactly `T`.
    pub fn time(&self, n: usize) -> f64 {
        if n == self.steps {
            self.horizon
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn left(&self) -> f64 {
        self.nodes[0]
    }

    pub fn right(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Same spatial nodes, different time partition.
    pub fn with_time(&self, steps: usize, horizon: f64) -> Result<Self, ValidationError> {
        Self::from_nodes(self.nodes.clone(), steps, horizon)
    }
}

/// Uniform grid on `[a, b]` with `intervals` cells and `steps` time steps up to `horizon`.
pub fn build_uniform_grid(
    a: f64,
    b: f64,
    intervals: usize,
    steps: usize,
    horizon: f64,
) -> Result<Grid1D, ValidationError> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(ValidationError::EmptyDomain { a, b });
    }
    if intervals < 2 {
        return Err(ValidationError::TooFewIntervals(intervals));
    }
    let h = (b - a) / intervals as f64;
    let mut nodes: Vec<f64> = (0..=intervals).map(|i| a + i as f64 * h).collect();
    nodes[intervals] = b;
    Grid1D::from_nodes(nodes, steps, horizon)
}

/// The volatility interval `[sigma_low, sigma_high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolatilityBand {
    low: f64,
    high: f64,
}

impl VolatilityBand {
    pub fn new(low: f64, high: f64) -> Result<Self, ValidationError> {
        if !(low.is_finite() && high.is_finite() && low > 0.0 && low <= high) {
            return Err(ValidationError::BadBand { low, high });
        }
        Ok(Self { low, high })
    }

    /// Degenerate band `sigma_low = sigma_high = sigma`: the linear heat equation.
    pub fn linear(sigma: f64) -> Result<Self, ValidationError> {
        Self::new(sigma, sigma)
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn is_degenerate(&self) -> bool {
        self.low == self.high
    }
}

/// Upper (sup over volatility scenarios) or lower (inf) expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectationMode {
    Sublinear,
    Superlinear,
}

impl ExpectationMode {
    pub fn flipped(self) -> Self {
        match self {
            Self::Sublinear => Self::Superlinear,
            Self::Superlinear => Self::Sublinear,
        }
    }
}

impl fmt::Display for ExpectationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Sublinear => f.write_str("sublinear"),
            Self::Superlinear => f.write_str("superlinear"),
        }
    }
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Initial profile `u(0, x)`.
#[derive(Clone)]
pub enum InitialCondition {
    /// 1 for `x <= threshold`, 0 otherwise.
    IndicatorLeq(f64),
    /// Piecewise-linear approximation of `1_{x<0}`: 1 for `x <= 0`,
    /// `1 - n x` on `(0, 1/n)`, 0 for `x >= 1/n`.
    SmoothedIndicator(u32),
    /// One value per grid node, used verbatim.
    Tabulated(Vec<f64>),
    Custom(ScalarFn),
}

impl InitialCondition {
    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::Custom(Arc::new(f))
    }
}

impl fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IndicatorLeq(y) => f.debug_tuple("IndicatorLeq").field(y).finish(),
            Self::SmoothedIndicator(n) => f.debug_tuple("SmoothedIndicator").field(n).finish(),
            Self::Tabulated(v) => f.debug_tuple("Tabulated").field(&v.len()).finish(),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// `phi_n` from the mollifier family approximating `1_{x<0}`.
pub fn smoothed_indicator(n: u32, x: f64) -> f64 {
    let n = f64::from(n);
    if x <= 0.0 {
        1.0
    } else if x < 1.0 / n {
        1.0 - n * x
    } else {
        0.0
    }
}

/// Dirichlet data as a function of time.
#[derive(Clone)]
pub enum Boundary {
    Constant(f64),
    Function(ScalarFn),
}

impl Boundary {
    pub fn function<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self::Function(Arc::new(f))
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant(c) => *c,
            Self::Function(f) => f(t),
        }
    }

    fn negated(&self) -> Self {
        match self {
            Self::Constant(c) => Self::Constant(-c),
            Self::Function(f) => {
                let f = Arc::clone(f);
                Self::function(move |t| -f(t))
            }
        }
    }
}

impl fmt::Debug for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// A complete, validated boundary-value problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    grid: Arc<Grid1D>,
    band: VolatilityBand,
    mode: ExpectationMode,
    initial: InitialCondition,
    left: Boundary,
    right: Boundary,
}

impl ProblemSpec {
    pub fn new(
        grid: Grid1D,
        band: VolatilityBand,
        mode: ExpectationMode,
        initial: InitialCondition,
        left: Boundary,
        right: Boundary,
    ) -> Result<Self, ValidationError> {
        let spec = Self {
            grid: Arc::new(grid),
            band,
            mode,
            initial,
            left,
            right,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), ValidationError> {
        if let InitialCondition::SmoothedIndicator(0) = self.initial {
            return Err(ValidationError::BadSmoothingIndex);
        }
        if let InitialCondition::Tabulated(v) = &self.initial {
            if v.len() != self.grid.len() {
                return Err(ValidationError::TabulatedLength {
                    expected: self.grid.len(),
                    got: v.len(),
                });
            }
        }
        let values = self.initial_values();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ValidationError::NonFiniteInitial {
                index: i,
                x: self.grid.nodes()[i],
            });
        }
        for n in 0..=self.grid.steps() {
            let t = self.grid.time(n);
            if !self.left.eval(t).is_finite() {
                return Err(ValidationError::NonFiniteBoundary { side: "left", t });
            }
            if !self.right.eval(t).is_finite() {
                return Err(ValidationError::NonFiniteBoundary { side: "right", t });
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn grid_handle(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn band(&self) -> VolatilityBand {
        self.band
    }

    pub fn mode(&self) -> ExpectationMode {
        self.mode
    }

    pub fn initial(&self) -> &InitialCondition {
        &self.initial
    }

    pub fn left_boundary(&self) -> &Boundary {
        &self.left
    }

    pub fn right_boundary(&self) -> &Boundary {
        &self.right
    }

    pub fn boundary_values(&self, t: f64) -> (f64, f64) {
        (self.left.eval(t), self.right.eval(t))
    }

    fn initial_values(&self) -> Vec<f64> {
        let nodes = self.grid.nodes();
        match &self.initial {
            InitialCondition::IndicatorLeq(y) => nodes
                .iter()
                .map(|&x| if x <= *y { 1.0 } else { 0.0 })
                .collect(),
            InitialCondition::SmoothedIndicator(n) => {
                nodes.iter().map(|&x| smoothed_indicator(*n, x)).collect()
            }
            InitialCondition::Tabulated(v) => v.clone(),
            InitialCondition::Custom(f) => nodes.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Replace the grid, keeping everything else. Tabulated data must match
    /// the new node count.
    pub fn with_grid(&self, grid: Grid1D) -> Result<Self, ValidationError> {
        Self::new(
            grid,
            self.band,
            self.mode,
            self.initial.clone(),
            self.left.clone(),
            self.right.clone(),
        )
    }

    /// Uniform grid over the same domain and horizon.
    pub fn with_uniform_grid(&self, intervals: usize, steps: usize) -> Result<Self, ValidationError> {
        let grid = build_uniform_grid(
            self.grid.left(),
            self.grid.right(),
            intervals,
            steps,
            self.grid.horizon(),
        )?;
        self.with_grid(grid)
    }

    pub fn with_band(&self, band: VolatilityBand) -> Self {
        Self { band, ..self.clone() }
    }

    pub fn with_mode(&self, mode: ExpectationMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn with_initial(&self, initial: InitialCondition) -> Result<Self, ValidationError> {
        let spec = Self { initial, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_boundaries(&self, left: Boundary, right: Boundary) -> Result<Self, ValidationError> {
        let spec = Self { left, right, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    /// Same problem with `phi`, `g` and `h` replaced by their negatives.
    /// Initial data is tabulated at the grid nodes so the negation is exact.
    pub fn negated_data(&self) -> Self {
        let values = self.initial_values().into_iter().map(|v| -v).collect();
        Self {
            initial: InitialCondition::Tabulated(values),
            left: self.left.negated(),
            right: self.right.negated(),
            ..self.clone()
        }
    }
}

/// Values on every node of a grid at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionField {
    grid: Arc<Grid1D>,
    time_index: usize,
    values: Vec<f64>,
}

impl SolutionField {
    pub fn new(grid: Arc<Grid1D>, time_index: usize, values: Vec<f64>) -> Result<Self, ValidationError> {
        if values.len() != grid.len() {
            return Err(ValidationError::TabulatedLength {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, time_index, values })
    }

    pub fn grid(&self) -> &Arc<Grid1D> {
        &self.grid
    }

    pub fn time_index(&self) -> usize {
        self.time_index
    }

    pub fn time(&self) -> f64 {
        self.grid.time(self.time_index)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, grid: &Arc<Grid1D>) -> bool {
        Arc::ptr_eq(&self.grid, grid) || *self.grid == **grid
    }

    /// Nodal value at a node, linear interpolation between nodes.
    pub fn evaluate_at(&self, x: f64) -> Result<f64, ValidationError> {
        let nodes = self.grid.nodes();
        let (a, b) = (self.grid.left(), self.grid.right());
        if !(x >= a && x <= b) {
            return Err(ValidationError::OutOfDomain { x, a, b });
        }
        // first node strictly greater than x
        let j = nodes.partition_point(|&node| node <= x);
        if j == 0 {
            return Ok(self.values[0]);
        }
        let i = j - 1;
        if nodes[i] == x || j == nodes.len() {
            return Ok(self.values[i]);
        }
        let w = (x - nodes[i]) / (nodes[j] - nodes[i]);
        Ok(self.values[i] + w * (self.values[j] - self.values[i]))
    }
}

/// Initial field `u_i = phi(x_i)` at time index 0.
pub fn sample_initial(spec: &ProblemSpec) -> SolutionField {
    SolutionField {
        grid: Arc::clone(&spec.grid),
        time_index: 0,
        values: spec.initial_values(),
    }
}
