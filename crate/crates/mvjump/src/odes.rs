//! Scalar linear ODE solvers for the control problem.
//!
//! Everything here is a first-order linear equation `x'(t) = a(t) x(t) + b(t)`
//! integrated with classical fixed-step RK4 on a shared uniform grid:
//!
//! * backward in time: the feedback-gain pair `phi`/`psi` (adjoint route) and
//!   the value-function triple `P`/`Q`/`R` (dynamic-programming route), with
//!   terminal data `phi(T) = P(T) = 1` and `psi(T) = Q(T) = R(T) = 0`;
//! * forward in time: the first and second moments of optimally controlled
//!   wealth.
//!
//! `phi` and `P` (and likewise `psi` and `Q`) solve the same equations and
//! must agree; both are kept because the two derivation routes are verified
//! against each other downstream.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SolutionGrid};
use crate::market::MarketModel;
use serde::{Deserialize, Serialize};

/// Scalars introduced by embedding the mean-variance objective into a single
/// quadratic-cost problem: the Lagrange weight `w`, the wealth shift `beta`,
/// the consumption rate `gamma`, and the initial wealth `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub w: f64,
    pub beta: f64,
    pub gamma: f64,
    pub x0: f64,
}

impl EmbeddingParams {
    pub fn new(w: f64, beta: f64, gamma: f64, x0: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::Model(format!("embedding weight must be > 0, got {w}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Model(format!("consumption rate must be >= 0, got {gamma}")));
        }
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(Error::Model(format!("initial wealth must be > 0, got {x0}")));
        }
        if !beta.is_finite() {
            return Err(Error::Model(format!("wealth shift must be finite, got {beta}")));
        }
        Ok(Self { w, beta, gamma, x0 })
    }

    pub fn sqrt_w(&self) -> f64 {
        self.w.sqrt()
    }

    /// Embedded initial state `y0 = sqrt(w) (x0 - beta)`.
    pub fn y0(&self) -> f64 {
        self.sqrt_w() * (self.x0 - self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// boundary value given at `t0`
    Forward,
    /// boundary value given at `t1`
    Backward,
}

// Boundary stages of a step are nudged inward by this fraction of the step so
// that piecewise-constant coefficients are sampled from the interval the step
// actually covers, not from the neighbouring one when a node sits exactly on
// a coefficient breakpoint. The perturbation for smooth coefficients is far
// below every tolerance in this crate.
const STAGE_NUDGE: f64 = 1e-9;

/// Classical RK4 for `x' = a(t) x + b(t)` with the boundary value at either
/// end of the grid. Backward problems are integrated in reversed time.
pub fn integrate_scalar_linear(
    a: impl Fn(f64) -> f64,
    b: impl Fn(f64) -> f64,
    boundary: f64,
    direction: Direction,
    spec: GridSpec,
) -> Result<SolutionGrid> {
    let n = spec.n;
    let h = spec.h();
    let f = |t: f64, x: f64| a(t) * x + b(t);
    let mut values = vec![0.0; n + 1];
    match direction {
        Direction::Forward => {
            let mut x = boundary;
            values[0] = x;
            for i in 0..n {
                let t = spec.node(i);
                x = rk4_step(&f, t, x, h).ok_or(Error::Integration { step: i, t })?;
                values[i + 1] = x;
            }
        }
        Direction::Backward => {
            let mut x = boundary;
            values[n] = x;
            for i in 0..n {
                let t = spec.node(n - i);
                x = rk4_step(&f, t, x, -h).ok_or(Error::Integration { step: i, t })?;
                values[n - i - 1] = x;
            }
        }
    }
    SolutionGrid::new(spec, values)
}

fn rk4_step(f: &impl Fn(f64, f64) -> f64, t: f64, x: f64, step: f64) -> Option<f64> {
    let k1 = f(t + STAGE_NUDGE * step, x);
    let k2 = f(t + 0.5 * step, x + 0.5 * step * k1);
    let k3 = f(t + 0.5 * step, x + 0.5 * step * k2);
    let k4 = f(t + (1.0 - STAGE_NUDGE) * step, x + step * k3);
    let next = x + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    next.is_finite().then_some(next)
}

/// Backward solve of `phi' = (theta - 2 rho + gamma) phi`, `phi(T) = 1`.
pub fn solve_phi(
    model: &MarketModel,
    params: &EmbeddingParams,
    spec: GridSpec,
) -> Result<SolutionGrid> {
    let rates = model.rates();
    let gamma = params.gamma;
    integrate_scalar_linear(
        |t| rates.theta_at(t) - 2.0 * rates.rho_at(t) + gamma,
        |_| 0.0,
        1.0,
        Direction::Backward,
        spec,
    )
}

/// Exact `phi(t) = exp(-int_t^T (theta - 2 rho + gamma))`, evaluated by
/// summing the piecewise-constant integrand interval by interval.
pub fn closed_form_phi(model: &MarketModel, params: &EmbeddingParams, t: f64) -> Result<f64> {
    let rates = model.rates();
    let t_end = rates.t_end();
    if !(0.0..=t_end).contains(&t) {
        return Err(Error::Domain { t, lo: 0.0, hi: t_end });
    }
    Ok((-rates.integral_combo(t, t_end, -2.0, 1.0, params.gamma)).exp())
}

/// Backward solve of
/// `psi' = (theta - rho + gamma) psi - sqrt(w) beta rho phi + (rho - theta)/sqrt(w)`,
/// `psi(T) = 0`, with `phi` sampled from an already-computed grid.
pub fn solve_psi(
    model: &MarketModel,
    params: &EmbeddingParams,
    phi: &SolutionGrid,
    spec: GridSpec,
) -> Result<SolutionGrid> {
    let rates = model.rates();
    let gamma = params.gamma;
    let sw = params.sqrt_w();
    let beta = params.beta;
    integrate_scalar_linear(
        |t| rates.theta_at(t) - rates.rho_at(t) + gamma,
        |t| {
            let rho = rates.rho_at(t);
            let theta = rates.theta_at(t);
            -sw * beta * rho * phi.value(t).expect("phi grid covers the spec")
                + (rho - theta) / sw
        },
        0.0,
        Direction::Backward,
        spec,
    )
}

/// Backward solve of `P' = (theta + gamma - 2 rho) P`, `P(T) = 1`.
pub fn solve_p(
    model: &MarketModel,
    params: &EmbeddingParams,
    spec: GridSpec,
) -> Result<SolutionGrid> {
    let rates = model.rates();
    let gamma = params.gamma;
    integrate_scalar_linear(
        |t| rates.theta_at(t) + gamma - 2.0 * rates.rho_at(t),
        |_| 0.0,
        1.0,
        Direction::Backward,
        spec,
    )
}

/// Backward solve of
/// `Q' = (theta + gamma - rho) Q - sqrt(w) beta rho P + rho/sqrt(w) - theta/sqrt(w)`,
/// `Q(T) = 0`.
pub fn solve_q(
    model: &MarketModel,
    params: &EmbeddingParams,
    p: &SolutionGrid,
    spec: GridSpec,
) -> Result<SolutionGrid> {
    let rates = model.rates();
    let gamma = params.gamma;
    let sw = params.sqrt_w();
    let beta = params.beta;
    integrate_scalar_linear(
        |t| rates.theta_at(t) + gamma - rates.rho_at(t),
        |t| {
            let rho = rates.rho_at(t);
            let theta = rates.theta_at(t);
            -sw * beta * rho * p.value(t).expect("P grid covers the spec") + rho / sw
                - theta / sw
        },
        0.0,
        Direction::Backward,
        spec,
    )
}

/// Shape of the source term in the `R` equation. The published display of
/// this equation disagrees with its own derivation in two places, so all four
/// readings are solvable for audit; the Monte Carlo utility check singles out
/// the consistent one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RSourceVariant {
    /// square term `(Q - 1/sqrt(w))^2` when true, `(Q - 1)^2` when false
    pub shifted_square: bool,
    /// coupling `- sqrt(w) beta rho Q` when true, `+ sqrt(w) beta rho Q` when false
    pub negative_coupling: bool,
}

impl RSourceVariant {
    /// The reading consistent with the quadratic value-function expansion;
    /// `-V(0, y0)` under this form matches the simulated recursive utility.
    pub const CONSISTENT: Self = Self { shifted_square: true, negative_coupling: true };
    /// The equation exactly as displayed.
    pub const AS_DISPLAYED: Self = Self { shifted_square: false, negative_coupling: false };
}

impl Default for RSourceVariant {
    fn default() -> Self {
        Self::CONSISTENT
    }
}

/// Backward solve of `R' = gamma R + rho beta -/+ sqrt(w) beta rho Q
/// + theta (Q - shift)^2 / (2 P)`, `R(T) = 0`, under the consistent reading.
pub fn solve_r(
    model: &MarketModel,
    params: &EmbeddingParams,
    p: &SolutionGrid,
    q: &SolutionGrid,
    spec: GridSpec,
) -> Result<SolutionGrid> {
    solve_r_variant(model, params, p, q, spec, RSourceVariant::CONSISTENT)
}

/// As [`solve_r`] but with an explicit source-term reading.
pub fn solve_r_variant(
    model: &MarketModel,
    params: &EmbeddingParams,
    p: &SolutionGrid,
    q: &SolutionGrid,
    spec: GridSpec,
    variant: RSourceVariant,
) -> Result<SolutionGrid> {
    if let Some(index) = p.values.iter().position(|&v| v <= 0.0) {
        return Err(Error::NonPositiveP { index });
    }
    let rates = model.rates();
    let gamma = params.gamma;
    let sw = params.sqrt_w();
    let beta = params.beta;
    let shift = if variant.shifted_square { 1.0 / sw } else { 1.0 };
    let coupling = if variant.negative_coupling { -1.0 } else { 1.0 };
    integrate_scalar_linear(
        |_| gamma,
        |t| {
            let rho = rates.rho_at(t);
            let theta = rates.theta_at(t);
            let pv = p.value(t).expect("P grid covers the spec");
            let qv = q.value(t).expect("Q grid covers the spec");
            let dq = qv - shift;
            rho * beta + coupling * sw * beta * rho * qv + theta * dq * dq / (2.0 * pv)
        },
        0.0,
        Direction::Backward,
        spec,
    )
}

/// `a(t) = 1 / phi(t)`, via the exact closed form.
pub fn eval_a(model: &MarketModel, params: &EmbeddingParams, t: f64) -> Result<f64> {
    Ok(1.0 / closed_form_phi(model, params, t)?)
}

/// `C(t) = -beta + a(t) psi(t)/sqrt(w) - a(t)/w`, the constant offset in the
/// optimally controlled wealth drift.
pub fn eval_c(
    model: &MarketModel,
    params: &EmbeddingParams,
    psi: &SolutionGrid,
    t: f64,
) -> Result<f64> {
    let a = eval_a(model, params, t)?;
    Ok(-params.beta + a * psi.value(t)? / params.sqrt_w() - a / params.w)
}

/// Forward solve of the mean of optimally controlled wealth:
/// `m' = (rho - theta) m - theta C`, `m(0) = x0`.
pub fn solve_mean(
    model: &MarketModel,
    params: &EmbeddingParams,
    psi: &SolutionGrid,
    spec: GridSpec,
) -> Result<SolutionGrid> {
    let rates = model.rates();
    integrate_scalar_linear(
        |t| rates.rho_at(t) - rates.theta_at(t),
        |t| {
            -rates.theta_at(t)
                * eval_c(model, params, psi, t).expect("psi grid covers the spec")
        },
        params.x0,
        Direction::Forward,
        spec,
    )
}

/// Forward solve of the second moment:
/// `m2' = (2 rho - theta) m2 + theta C^2`, `m2(0) = x0^2`.
pub fn solve_second_moment(
    model: &MarketModel,
    params: &EmbeddingParams,
    psi: &SolutionGrid,
    spec: GridSpec,
) -> Result<SolutionGrid> {
    let rates = model.rates();
    integrate_scalar_linear(
        |t| 2.0 * rates.rho_at(t) - rates.theta_at(t),
        |t| {
            let c = eval_c(model, params, psi, t).expect("psi grid covers the spec");
            rates.theta_at(t) * c * c
        },
        params.x0 * params.x0,
        Direction::Forward,
        spec,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_model() -> MarketModel {
        MarketModel::constant(1.0, 0.06, 0.12, 0.15, &[(2.0, 0.10)])
            .unwrap()
            .validated()
            .unwrap()
    }

    fn fixture_params() -> EmbeddingParams {
        EmbeddingParams::new(1.0, 0.5, 0.2, 1.0).unwrap()
    }

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(0.0, 1.0, n).unwrap()
    }

    /// Constant-coefficient closed form for psi, used as an oracle:
    /// variation of constants applied to the psi equation.
    fn psi_constant_oracle(params: &EmbeddingParams, theta: f64, rho: f64, tau: f64) -> f64 {
        let a = theta - 2.0 * rho + params.gamma;
        let b = theta - rho + params.gamma;
        let sw = params.sqrt_w();
        sw * params.beta * ((-a * tau).exp() - (-b * tau).exp())
            + (theta - rho) / sw * (1.0 - (-b * tau).exp()) / b
    }

    #[test]
    fn integrator_zero_dynamics_is_constant() {
        let grid =
            integrate_scalar_linear(|_| 0.0, |_| 0.0, 1.0, Direction::Backward, spec(16)).unwrap();
        assert!(grid.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn integrator_matches_exponential_decay() {
        let grid =
            integrate_scalar_linear(|_| -1.0, |_| 0.0, 1.0, Direction::Forward, spec(1000))
                .unwrap();
        assert!((grid.last() - (-1.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn integrator_quadrature_of_constant() {
        let grid =
            integrate_scalar_linear(|_| 0.0, |_| 1.0, 0.0, Direction::Forward, spec(100)).unwrap();
        assert!((grid.last() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integrator_flags_overflow() {
        let err = integrate_scalar_linear(|_| 1e300, |_| 0.0, 1.0, Direction::Forward, spec(4))
            .unwrap_err();
        assert!(matches!(err, Error::Integration { .. }));
    }

    #[test]
    fn phi_matches_closed_form_on_fixture() {
        let model = fixture_model();
        let params = fixture_params();
        let s = spec(10_000);
        let phi = solve_phi(&model, &params, s).unwrap();
        assert_eq!(phi.last(), 1.0);
        let mut worst = 0.0f64;
        for i in 0..=s.n {
            let t = s.node(i);
            let exact = closed_form_phi(&model, &params, t).unwrap();
            worst = worst.max((phi.values[i] - exact).abs());
        }
        assert!(worst < 1e-10, "max |phi - closed form| = {worst}");
        // hand-recomputed constant-coefficient value:
        // exp(-(0.0036/0.0425 - 0.12 + 0.2)) = exp(-0.164705882...)
        let expected = (-(0.0036f64 / 0.0425 - 0.12 + 0.2)).exp();
        assert!((phi.first() - expected).abs() < 1e-10);
        assert!((expected - 0.848143).abs() < 1e-6);
        assert!(phi.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn phi_is_one_when_exponent_vanishes() {
        // choose gamma = 2 rho - theta so theta - 2 rho + gamma = 0
        let model = fixture_model();
        let theta = model.eval_theta(0.0).unwrap();
        let gamma = 2.0 * 0.06 - theta;
        let params = EmbeddingParams::new(1.0, 0.0, gamma, 1.0).unwrap();
        let phi = solve_phi(&model, &params, spec(200)).unwrap();
        assert!(phi.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn phi_decreases_with_gamma() {
        let model = fixture_model();
        let lo = solve_phi(&model, &EmbeddingParams::new(1.0, 0.5, 0.2, 1.0).unwrap(), spec(500))
            .unwrap();
        let hi = solve_phi(&model, &EmbeddingParams::new(1.0, 0.5, 0.4, 1.0).unwrap(), spec(500))
            .unwrap();
        assert!(hi.first() < lo.first());
    }

    #[test]
    fn psi_terminal_zero_and_matches_constant_oracle() {
        let model = fixture_model();
        let params = fixture_params();
        let s = spec(10_000);
        let phi = solve_phi(&model, &params, s).unwrap();
        let psi = solve_psi(&model, &params, &phi, s).unwrap();
        assert_eq!(psi.last(), 0.0);
        let theta = model.eval_theta(0.0).unwrap();
        let mut worst = 0.0f64;
        for i in 0..=s.n {
            let tau = 1.0 - s.node(i);
            let exact = psi_constant_oracle(&params, theta, 0.06, tau);
            worst = worst.max((psi.values[i] - exact).abs());
        }
        assert!(worst < 1e-10, "max |psi - oracle| = {worst}");
    }

    #[test]
    fn psi_vanishes_when_sources_vanish() {
        // beta = 0 and theta == rho kill both source terms
        let sigma = 0.06f64.sqrt(); // Lambda = sigma^2 = 0.06 => theta = 0.0036/0.06 = 0.06 = rho
        let model = MarketModel::constant(1.0, 0.06, 0.12, sigma, &[])
            .unwrap()
            .validated()
            .unwrap();
        let params = EmbeddingParams::new(1.0, 0.0, 0.2, 1.0).unwrap();
        let s = spec(400);
        let phi = solve_phi(&model, &params, s).unwrap();
        let psi = solve_psi(&model, &params, &phi, s).unwrap();
        assert!(psi.values.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn p_and_q_match_phi_and_psi() {
        let model = fixture_model();
        let params = fixture_params();
        let s = spec(10_000);
        let phi = solve_phi(&model, &params, s).unwrap();
        let psi = solve_psi(&model, &params, &phi, s).unwrap();
        let p = solve_p(&model, &params, s).unwrap();
        let q = solve_q(&model, &params, &p, s).unwrap();
        assert!(phi.max_abs_diff(&p) < 1e-12);
        assert!(psi.max_abs_diff(&q) < 1e-12);
        assert!((p.first() - closed_form_phi(&model, &params, 0.0).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn r_terminal_zero_and_matches_quadrature_oracle() {
        let model = fixture_model();
        let params = fixture_params();
        let s = spec(10_000);
        let p = solve_p(&model, &params, s).unwrap();
        let q = solve_q(&model, &params, &p, s).unwrap();
        let r = solve_r(&model, &params, &p, &q, s).unwrap();
        assert_eq!(r.last(), 0.0);

        // Simpson quadrature of R(t) = -int_t^T exp(-gamma (s-t)) S(s) ds with
        // S built from the constant-coefficient closed forms.
        let theta = model.eval_theta(0.0).unwrap();
        let rho = 0.06;
        let gamma = params.gamma;
        let sw = params.sqrt_w();
        let a_exp = theta - 2.0 * rho + gamma;
        let source = |s: f64| {
            let pv = (-a_exp * (1.0 - s)).exp();
            let qv = psi_constant_oracle(&params, theta, rho, 1.0 - s);
            let dq = qv - 1.0 / sw;
            rho * params.beta - sw * params.beta * rho * qv + theta * dq * dq / (2.0 * pv)
        };
        for &t in &[0.0, 0.25, 0.5, 0.9] {
            let panels = 4096;
            let h = (1.0 - t) / panels as f64;
            let mut acc = source(t) + source(1.0) * (-gamma * (1.0 - t)).exp();
            for k in 1..panels {
                let s_k = t + k as f64 * h;
                let wgt = if k % 2 == 1 { 4.0 } else { 2.0 };
                acc += wgt * source(s_k) * (-gamma * (s_k - t)).exp();
            }
            let oracle = -acc * h / 3.0;
            let got = r.value(t).unwrap();
            assert!(
                (got - oracle).abs() < 1e-9,
                "R({t}) = {got}, oracle = {oracle}"
            );
        }
    }

    #[test]
    fn r_rejects_non_positive_p() {
        let model = fixture_model();
        let params = fixture_params();
        let s = spec(8);
        let p = SolutionGrid::new(s, vec![-1.0; 9]).unwrap();
        let q = SolutionGrid::new(s, vec![0.0; 9]).unwrap();
        assert!(matches!(
            solve_r(&model, &params, &p, &q, s),
            Err(Error::NonPositiveP { .. })
        ));
    }

    #[test]
    fn a_is_reciprocal_of_phi() {
        let model = fixture_model();
        let params = fixture_params();
        assert!((eval_a(&model, &params, 1.0).unwrap() - 1.0).abs() < 1e-15);
        // hand-recomputed: 1 / exp(-0.164705882...) = 1.1790463...
        let a0 = eval_a(&model, &params, 0.0).unwrap();
        assert!((a0 - (0.0036f64 / 0.0425 - 0.12 + 0.2).exp()).abs() < 1e-14);
        assert!((a0 - 1.179046).abs() < 1e-6);
        let s = spec(1000);
        let phi = solve_phi(&model, &params, s).unwrap();
        for i in (0..=s.n).step_by(50) {
            let t = s.node(i);
            let product = eval_a(&model, &params, t).unwrap() * phi.values[i];
            assert!((product - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn c_terminal_and_degenerate_values() {
        let model = fixture_model();
        let params = fixture_params();
        let s = spec(1000);
        let phi = solve_phi(&model, &params, s).unwrap();
        let psi = solve_psi(&model, &params, &phi, s).unwrap();
        // C(T) = -beta + 0 - 1/w
        assert!((eval_c(&model, &params, &psi, 1.0).unwrap() - (-1.5)).abs() < 1e-12);

        // with beta = 0 and psi forced to zero, C(t) = -a(t)
        let params0 = EmbeddingParams::new(1.0, 0.0, 0.2, 1.0).unwrap();
        let zero = SolutionGrid::new(s, vec![0.0; s.n + 1]).unwrap();
        for &t in &[0.0, 0.4, 1.0] {
            let c = eval_c(&model, &params0, &zero, t).unwrap();
            let a = eval_a(&model, &params0, t).unwrap();
            assert!((c + a).abs() < 1e-14);
        }

        // C(0) from the grid matches the closed-form composition
        let theta = model.eval_theta(0.0).unwrap();
        let a0 = (0.0036f64 / 0.0425 - 0.12 + 0.2).exp();
        let psi0 = psi_constant_oracle(&params, theta, 0.06, 1.0);
        let oracle = -params.beta + a0 * psi0 - a0;
        let got = eval_c(&model, &params, &psi, 0.0).unwrap();
        assert!((got - oracle).abs() < 1e-8, "C(0) = {got}, oracle {oracle}");
    }

    #[test]
    fn mean_initial_condition_and_affinity_in_x0() {
        let model = fixture_model();
        let s = spec(2000);
        let mut grids = Vec::new();
        for x0 in [1.0, 2.0, 3.0] {
            let params = EmbeddingParams::new(1.0, 0.0, 0.2, x0).unwrap();
            let phi = solve_phi(&model, &params, s).unwrap();
            let psi = solve_psi(&model, &params, &phi, s).unwrap();
            let mean = solve_mean(&model, &params, &psi, s).unwrap();
            assert_eq!(mean.first(), x0);
            grids.push(mean);
        }
        // solution is affine in x0 with beta (and hence C) held fixed
        for i in 0..=s.n {
            let d1 = grids[1].values[i] - grids[0].values[i];
            let d2 = grids[2].values[i] - grids[1].values[i];
            assert!((d1 - d2).abs() < 1e-12);
        }
    }

    #[test]
    fn second_moment_dominates_squared_mean() {
        let model = fixture_model();
        let params = fixture_params();
        let s = spec(2000);
        let phi = solve_phi(&model, &params, s).unwrap();
        let psi = solve_psi(&model, &params, &phi, s).unwrap();
        let mean = solve_mean(&model, &params, &psi, s).unwrap();
        let m2 = solve_second_moment(&model, &params, &psi, s).unwrap();
        assert_eq!(m2.first(), 1.0);
        for i in 0..=s.n {
            let var = m2.values[i] - mean.values[i] * mean.values[i];
            assert!(var >= -1e-12, "negative variance {var} at node {i}");
        }
    }
}
