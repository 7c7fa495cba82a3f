//! Kernels of the fully implicit scheme.
//!
//! At an interior node the discrete curvature
//! `Gamma_i = (u_{i+1} - 2 u_i + u_{i-1}) / ((x_{i+1} - x_i)(x_i - x_{i-1}))`
//! selects the volatility branch, which fixes the diffusion weight
//! `alpha_i = sigma(Gamma_i)^2 dt / (2 (x_{i+1} - x_i)(x_i - x_{i-1}))`.
//! One implicit step solves
//! `u_i^{n+1} - u_i^n = alpha_i^{n+1} (u_{i+1}^{n+1} - 2 u_i^{n+1} + u_{i-1}^{n+1})`
//! with Dirichlet rows at both ends.

use crate::error::ValidationError;
use crate::grid::{ExpectationMode, ProblemSpec, SolutionField, VolatilityBand};

/// `G(a)`: `(sigma_high^2 a^+ - sigma_low^2 a^-) / 2` in sublinear mode,
/// with the roles of the two volatilities swapped in superlinear mode.
pub fn g_function(a: f64, band: VolatilityBand, mode: ExpectationMode) -> f64 {
    let (pos, neg) = match mode {
        ExpectationMode::Sublinear => (band.high(), band.low()),
        ExpectationMode::Superlinear => (band.low(), band.high()),
    };
    0.5 * (pos * pos * a.max(0.0) - neg * neg * (-a).max(0.0))
}

/// Three consecutive nodes `x_left < x_mid < x_right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeGeometry {
    left: f64,
    mid: f64,
    right: f64,
}

impl NodeGeometry {
    pub fn new(left: f64, mid: f64, right: f64) -> Result<Self, ValidationError> {
        if !(left.is_finite() && right.is_finite() && left < mid && mid < right) {
            return Err(ValidationError::Other(format!(
                "node triple must be strictly increasing, got ({left}, {mid}, {right})"
            )));
        }
        Ok(Self { left, mid, right })
    }

    pub fn uniform(h: f64) -> Result<Self, ValidationError> {
        Self::new(-h, 0.0, h)
    }

    /// `(x_right - x_mid)(x_mid - x_left)`
    pub fn spacing_product(&self) -> f64 {
        (self.right - self.mid) * (self.mid - self.left)
    }
}

/// Scaled second difference of a node triple.
pub fn second_difference(
    u_left: f64,
    u_mid: f64,
    u_right: f64,
    x_left: f64,
    x_mid: f64,
    x_right: f64,
) -> Result<f64, ValidationError> {
    let geom = NodeGeometry::new(x_left, x_mid, x_right)?;
    Ok(curvature(u_left, u_mid, u_right, geom.spacing_product()))
}

#[inline]
fn curvature(u_left: f64, u_mid: f64, u_right: f64, spacing_product: f64) -> f64 {
    (u_right - 2.0 * u_mid + u_left) / spacing_product
}

/// Which end of the band a node uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SigmaChoice {
    High,
    Low,
}

impl SigmaChoice {
    /// Sublinear picks `High` on `gamma >= 0`, superlinear picks `Low` there.
    pub fn select(gamma: f64, mode: ExpectationMode) -> Self {
        match (mode, gamma >= 0.0) {
            (ExpectationMode::Sublinear, true) | (ExpectationMode::Superlinear, false) => Self::High,
            (ExpectationMode::Sublinear, false) | (ExpectationMode::Superlinear, true) => Self::Low,
        }
    }

    pub fn sigma(self, band: VolatilityBand) -> f64 {
        match self {
            Self::High => band.high(),
            Self::Low => band.low(),
        }
    }
}

/// Volatility selected by the sign of the discrete curvature.
pub fn sigma_select(gamma: f64, band: VolatilityBand, mode: ExpectationMode) -> f64 {
    SigmaChoice::select(gamma, mode).sigma(band)
}

pub fn alpha_coeff(
    sigma: f64,
    dt: f64,
    x_left: f64,
    x_mid: f64,
    x_right: f64,
) -> Result<f64, ValidationError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(ValidationError::BadTimeStep(dt));
    }
    let geom = NodeGeometry::new(x_left, x_mid, x_right)?;
    Ok(alpha(sigma, dt, geom.spacing_product()))
}

#[inline]
fn alpha(sigma: f64, dt: f64, spacing_product: f64) -> f64 {
    sigma * sigma * dt / (2.0 * spacing_product)
}

/// Per-node residual
/// `u_i^n - u_i^{n+1} + alpha_i^{n+1} (u_{i+1}^{n+1} - 2 u_i^{n+1} + u_{i-1}^{n+1})`,
/// with `alpha` taken from the curvature of the new-level triple.
pub fn residual(
    u_prev: f64,
    new_level: [f64; 3],
    geom: NodeGeometry,
    dt: f64,
    band: VolatilityBand,
    mode: ExpectationMode,
) -> f64 {
    let [ul, um, ur] = new_level;
    let sp = geom.spacing_product();
    let sigma = sigma_select(curvature(ul, um, ur, sp), band, mode);
    u_prev - um + alpha(sigma, dt, sp) * (ur - 2.0 * um + ul)
}

/// Tridiagonal matrix plus right-hand side. Row `i` reads
/// `lower[i] u_{i-1} + diag[i] u_i + upper[i] u_{i+1} = rhs[i]`;
/// `lower[0]` and `upper[last]` are unused and kept at zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TridiagonalSystem {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn with_len(n: usize) -> Self {
        Self {
            lower: vec![0.0; n],
            diag: vec![1.0; n],
            upper: vec![0.0; n],
            rhs: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// `A u`
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * u[i];
                if i > 0 {
                    s += self.lower[i] * u[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * u[i + 1];
                }
                s
            })
            .collect()
    }

    /// Row-wise `diag >= |lower| + |upper|`.
    pub fn is_diagonally_dominant(&self) -> bool {
        (0..self.len()).all(|i| self.diag[i] >= self.lower[i].abs() + self.upper[i].abs())
    }
}

/// Volatility branch chosen at each interior node.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SigmaPolicy(pub Vec<SigmaChoice>);

impl SigmaPolicy {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn choices(&self) -> &[SigmaChoice] {
        &self.0
    }

    /// Interior nodes (1-based grid index) whose volatility value differs.
    pub fn differing_nodes(&self, other: &Self, band: VolatilityBand) -> Vec<usize> {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .filter(|(_, (a, b))| a.sigma(band) != b.sigma(band))
            .map(|(k, _)| k + 1)
            .collect()
    }
}

/// Policy induced by the curvature of `values` at each interior node.
pub fn select_policy(
    values: &[f64],
    nodes: &[f64],
    mode: ExpectationMode,
    policy: &mut SigmaPolicy,
) {
    let m = nodes.len() - 1;
    policy.0.clear();
    policy.0.extend((1..m).map(|i| {
        let sp = (nodes[i + 1] - nodes[i]) * (nodes[i] - nodes[i - 1]);
        SigmaChoice::select(curvature(values[i - 1], values[i], values[i + 1], sp), mode)
    }));
}

/// Fill `system` with `[I + M] u = prev` for a frozen policy; boundary rows
/// are identity rows carrying `g(t_new)` and `h(t_new)`.
pub fn fill_system(
    policy: &SigmaPolicy,
    prev: &[f64],
    spec: &ProblemSpec,
    t_new: f64,
    system: &mut TridiagonalSystem,
) {
    let grid = spec.grid();
    let nodes = grid.nodes();
    let dt = grid.dt();
    let band = spec.band();
    let n = nodes.len();
    if system.len() != n {
        *system = TridiagonalSystem::with_len(n);
    }
    let (g, h) = spec.boundary_values(t_new);
    system.lower[0] = 0.0;
    system.diag[0] = 1.0;
    system.upper[0] = 0.0;
    system.rhs[0] = g;
    for i in 1..n - 1 {
        let sp = (nodes[i + 1] - nodes[i]) * (nodes[i] - nodes[i - 1]);
        let a = alpha(policy.0[i - 1].sigma(band), dt, sp);
        system.lower[i] = -a;
        system.diag[i] = 1.0 + 2.0 * a;
        system.upper[i] = -a;
        system.rhs[i] = prev[i];
    }
    system.lower[n - 1] = 0.0;
    system.diag[n - 1] = 1.0;
    system.upper[n - 1] = 0.0;
    system.rhs[n - 1] = h;
}

/// Linear system of one policy-iteration step with coefficients frozen at
/// the curvature signs of `candidate`.
pub fn assemble_system(
    candidate: &SolutionField,
    prev: &SolutionField,
    spec: &ProblemSpec,
    t_new: f64,
) -> Result<(TridiagonalSystem, SigmaPolicy), ValidationError> {
    if !candidate.same_grid(spec.grid_handle()) || !prev.same_grid(spec.grid_handle()) {
        return Err(ValidationError::GridMismatch);
    }
    let mut policy = SigmaPolicy::default();
    select_policy(candidate.values(), spec.grid().nodes(), spec.mode(), &mut policy);
    let mut system = TridiagonalSystem::with_len(spec.grid().len());
    fill_system(&policy, prev.values(), spec, t_new, &mut system);
    Ok((system, policy))
}

/// State of one interior node for the monotonicity probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeState {
    pub u_prev: f64,
    pub u_left: f64,
    pub u_mid: f64,
    pub u_right: f64,
    pub geom: NodeGeometry,
    pub dt: f64,
    pub band: VolatilityBand,
    pub mode: ExpectationMode,
}

impl ProbeState {
    fn residual(&self) -> f64 {
        residual(
            self.u_prev,
            [self.u_left, self.u_mid, self.u_right],
            self.geom,
            self.dt,
            self.band,
            self.mode,
        )
    }
}

/// Non-negative bumps applied by the probe.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Perturbation {
    pub right: f64,
    pub left: f64,
    pub prev: f64,
    pub mid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOutcome {
    /// Residual at the unperturbed state.
    pub base: f64,
    /// Residual after raising both new-level neighbours and the previous-level value.
    pub neighbors_raised: f64,
    /// Residual after raising only the node's own new-level value.
    pub own_raised: f64,
}

impl ProbeOutcome {
    /// Amount by which raising neighbours decreased the residual (0 if it did not).
    pub fn neighbor_violation(&self) -> f64 {
        (self.base - self.neighbors_raised).max(0.0)
    }

    /// Amount by which raising the own value increased the residual (0 if it did not).
    pub fn own_violation(&self) -> f64 {
        (self.own_raised - self.base).max(0.0)
    }
}

/// Residuals before and after perturbation; `alpha` is recomputed from each
/// perturbed state.
pub fn monotonicity_probe(state: ProbeState, eps: Perturbation) -> Result<ProbeOutcome, ValidationError> {
    for e in [eps.right, eps.left, eps.prev, eps.mid] {
        if e.is_nan() || e < 0.0 {
            return Err(ValidationError::NegativePerturbation(e));
        }
    }
    if !(state.dt.is_finite() && state.dt > 0.0) {
        return Err(ValidationError::BadTimeStep(state.dt));
    }
    let raised = ProbeState {
        u_prev: state.u_prev + eps.prev,
        u_left: state.u_left + eps.left,
        u_right: state.u_right + eps.right,
        ..state
    };
    let own = ProbeState {
        u_mid: state.u_mid + eps.mid,
        ..state
    };
    Ok(ProbeOutcome {
        base: state.residual(),
        neighbors_raised: raised.residual(),
        own_raised: own.residual(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_uniform_grid, sample_initial, Boundary, InitialCondition};
    use proptest::prelude::*;

    const SUB: ExpectationMode = ExpectationMode::Sublinear;
    const SUP: ExpectationMode = ExpectationMode::Superlinear;

    fn band() -> VolatilityBand {
        VolatilityBand::new(0.5, 1.0).unwrap()
    }

    #[test]
    fn g_function_values() {
        assert_eq!(g_function(2.0, band(), SUB), 1.0);
        assert_eq!(g_function(-2.0, band(), SUB), -0.25);
        assert_eq!(g_function(0.0, band(), SUB), 0.0);
        assert_eq!(g_function(0.0, band(), SUP), 0.0);
        assert_eq!(g_function(2.0, band(), SUP), 0.25);
        assert_eq!(g_function(-2.0, band(), SUP), -1.0);
    }

    #[test]
    fn second_difference_values() {
        assert_eq!(second_difference(1.0, 0.0, 1.0, -1.0, 0.0, 1.0).unwrap(), 2.0);
        assert_eq!(second_difference(3.3, 3.3, 3.3, 0.0, 0.1, 0.2).unwrap(), 0.0);
        assert_eq!(second_difference(0.0, 0.0, 1.0, -0.5, 0.0, 2.0).unwrap(), 1.0);
        assert!(second_difference(0.0, 0.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(second_difference(0.0, 0.0, 1.0, 1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn sigma_select_tie_rule() {
        assert_eq!(sigma_select(0.5, band(), SUB), 1.0);
        assert_eq!(sigma_select(0.0, band(), SUB), 1.0);
        assert_eq!(sigma_select(-0.5, band(), SUB), 0.5);
        assert_eq!(sigma_select(0.5, band(), SUP), 0.5);
        assert_eq!(sigma_select(0.0, band(), SUP), 0.5);
        assert_eq!(sigma_select(-0.5, band(), SUP), 1.0);
    }

    #[test]
    fn alpha_values() {
        assert!((alpha_coeff(1.0, 0.01, -0.1, 0.0, 0.1).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(alpha_coeff(0.0, 0.01, -0.1, 0.0, 0.1).unwrap(), 0.0);
        assert!((alpha_coeff(0.5, 0.1, -1.0, 0.0, 1.0).unwrap() - 0.0125).abs() < 1e-16);
        assert!(alpha_coeff(1.0, 0.0, -1.0, 0.0, 1.0).is_err());
        assert!(alpha_coeff(1.0, -0.1, -1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn residual_of_constant_state_vanishes() {
        let geom = NodeGeometry::new(0.0, 0.3, 0.4).unwrap();
        assert_eq!(residual(2.5, [2.5, 2.5, 2.5], geom, 0.7, band(), SUB), 0.0);
    }

    #[test]
    fn residual_at_hand_solved_node() {
        // u (1 + 2 alpha) = 1 + alpha with alpha = 0.0125
        let u = 1.0125 / 1.025;
        let geom = NodeGeometry::uniform(1.0).unwrap();
        let r = residual(1.0, [1.0, u, 0.0], geom, 0.1, band(), SUB);
        assert!(r.abs() < 1e-12, "{r}");
    }

    #[test]
    fn residual_linear_in_right_neighbour() {
        let geom = NodeGeometry::uniform(1.0).unwrap();
        let u = 1.0125 / 1.025;
        let eps = 0.01;
        let base = residual(1.0, [1.0, u, 0.0], geom, 0.1, band(), SUB);
        let bumped = residual(1.0, [1.0, u, eps], geom, 0.1, band(), SUB);
        // curvature stays negative, alpha stays 0.0125
        assert!((bumped - base - 0.0125 * eps).abs() < 1e-15);
    }

    fn three_node_spec(band: VolatilityBand) -> ProblemSpec {
        let grid = build_uniform_grid(-1.0, 1.0, 2, 1, 0.1).unwrap();
        ProblemSpec::new(
            grid,
            band,
            SUB,
            InitialCondition::IndicatorLeq(0.0),
            Boundary::Constant(1.0),
            Boundary::Constant(0.0),
        )
        .unwrap()
    }

    #[test]
    fn assemble_three_node_system() {
        let spec = three_node_spec(band());
        let prev = sample_initial(&spec);
        let (sys, policy) = assemble_system(&prev, &prev, &spec, 0.1).unwrap();
        assert_eq!(policy.choices(), &[SigmaChoice::Low]);
        assert_eq!(sys.diag, vec![1.0, 1.025, 1.0]);
        assert_eq!(sys.lower, vec![0.0, -0.0125, 0.0]);
        assert_eq!(sys.upper, vec![0.0, -0.0125, 0.0]);
        assert_eq!(sys.rhs, vec![1.0, 1.0, 0.0]);
        // with the boundary values substituted: 1.025 u = 1 + 0.0125
        let folded = sys.rhs[1] - sys.lower[1] * sys.rhs[0] - sys.upper[1] * sys.rhs[2];
        assert!((folded - 1.0125).abs() < 1e-15);
    }

    #[test]
    fn zero_curvature_candidate_uses_high_sigma() {
        let grid = build_uniform_grid(0.0, 1.0, 8, 4, 1.0).unwrap();
        let spec = ProblemSpec::new(
            grid,
            band(),
            SUB,
            InitialCondition::custom(|x| 3.0 * x - 1.0),
            Boundary::Constant(-1.0),
            Boundary::Constant(2.0),
        )
        .unwrap();
        // exact zero curvature: constant candidate
        let flat = SolutionField::new(spec.grid_handle().clone(), 0, vec![0.25; 9]).unwrap();
        let (sys, policy) = assemble_system(&flat, &flat, &spec, 0.25).unwrap();
        assert!(policy.choices().iter().all(|c| *c == SigmaChoice::High));
        // symmetric on the interior block
        for i in 1..7 {
            assert_eq!(sys.upper[i], sys.lower[i + 1]);
        }
    }

    #[test]
    fn degenerate_band_system_ignores_candidate() {
        let spec = three_node_spec(VolatilityBand::linear(0.7).unwrap());
        let prev = sample_initial(&spec);
        let other = SolutionField::new(prev.grid().clone(), 0, vec![0.0, 5.0, 0.0]).unwrap();
        let (a, _) = assemble_system(&prev, &prev, &spec, 0.1).unwrap();
        let (b, _) = assemble_system(&other, &prev, &spec, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assemble_rejects_foreign_grid() {
        let spec = three_node_spec(band());
        let g2 = std::sync::Arc::new(build_uniform_grid(-1.0, 2.0, 2, 1, 0.1).unwrap());
        let foreign = SolutionField::new(g2, 0, vec![0.0; 3]).unwrap();
        let prev = sample_initial(&spec);
        assert_eq!(
            assemble_system(&foreign, &prev, &spec, 0.1),
            Err(ValidationError::GridMismatch)
        );
    }

    fn probe_state() -> ProbeState {
        ProbeState {
            u_prev: 0.4,
            u_left: 0.9,
            u_mid: 0.5,
            u_right: 0.2,
            geom: NodeGeometry::new(0.0, 0.1, 0.25).unwrap(),
            dt: 0.03,
            band: band(),
            mode: SUB,
        }
    }

    #[test]
    fn probe_identity_and_prev_shift() {
        let out = monotonicity_probe(probe_state(), Perturbation::default()).unwrap();
        assert_eq!(out.base, out.neighbors_raised);
        assert_eq!(out.base, out.own_raised);

        let eps = 0.125;
        let out = monotonicity_probe(
            probe_state(),
            Perturbation { prev: eps, ..Default::default() },
        )
        .unwrap();
        assert!((out.neighbors_raised - out.base - eps).abs() < 1e-15);
    }

    #[test]
    fn probe_rejects_negative_eps() {
        let err = monotonicity_probe(
            probe_state(),
            Perturbation { left: -1e-3, ..Default::default() },
        );
        assert_eq!(err, Err(ValidationError::NegativePerturbation(-1e-3)));
    }

    proptest! {
        #[test]
        fn g_is_positively_homogeneous(a in -50.0..50.0f64, lam in 0.0..20.0f64,
                                       lo in 0.05..2.0f64, extra in 0.0..2.0f64) {
            let band = VolatilityBand::new(lo, lo + extra).unwrap();
            for mode in [SUB, SUP] {
                let lhs = g_function(lam * a, band, mode);
                let rhs = lam * g_function(a, band, mode);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn g_is_subadditive_in_sublinear_mode(a in -50.0..50.0f64, b in -50.0..50.0f64,
                                              lo in 0.05..2.0f64, extra in 0.0..2.0f64) {
            let band = VolatilityBand::new(lo, lo + extra).unwrap();
            let lhs = g_function(a + b, band, SUB);
            let rhs = g_function(a, band, SUB) + g_function(b, band, SUB);
            prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
            // superadditive in the other mode
            let lhs = g_function(a + b, band, SUP);
            let rhs = g_function(a, band, SUP) + g_function(b, band, SUP);
            prop_assert!(lhs >= rhs - 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn sigma_select_duality(gamma in -10.0..10.0f64, lo in 0.05..2.0f64, extra in 0.0..2.0f64) {
            let band = VolatilityBand::new(lo, lo + extra).unwrap();
            if gamma != 0.0 {
                prop_assert_eq!(sigma_select(-gamma, band, SUB), sigma_select(gamma, band, SUP));
            }
            // the curvature term agrees even at the tie
            let sub = sigma_select(-gamma, band, SUB).powi(2) * (-gamma);
            let sup = sigma_select(gamma, band, SUP).powi(2) * gamma;
            prop_assert_eq!(sub, -sup);
        }

        #[test]
        fn assembled_rows_are_m_matrix_rows(values in proptest::collection::vec(-3.0..3.0f64, 12),
                                            lo in 0.05..2.0f64, extra in 0.0..2.0f64,
                                            dt in 1e-4..2.0f64, superlinear in any::<bool>()) {
            let grid = crate::grid::Grid1D::from_nodes(
                (0..12).map(|i| (i as f64).powf(1.3)).collect(), 3, 3.0 * dt).unwrap();
            let mode = if superlinear { SUP } else { SUB };
            let spec = ProblemSpec::new(grid, VolatilityBand::new(lo, lo + extra).unwrap(), mode,
                InitialCondition::Tabulated(values.clone()),
                Boundary::Constant(values[0]), Boundary::Constant(values[11])).unwrap();
            let field = sample_initial(&spec);
            let (sys, policy) = assemble_system(&field, &field, &spec, dt).unwrap();
            prop_assert_eq!(policy.len(), 10);
            prop_assert!(sys.is_diagonally_dominant());
            for i in 1..11 {
                prop_assert!(sys.diag[i] >= 1.0);
                prop_assert!(sys.lower[i] <= 0.0 && sys.upper[i] <= 0.0);
                prop_assert!(sys.diag[i] > sys.lower[i].abs() + sys.upper[i].abs());
            }
        }
    }
}
