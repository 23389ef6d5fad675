//! Feedback laws, adjoint processes, the quadratic value function, the
//! generalized Hamiltonian, and the numerical check that the adjoint-based
//! and dynamic-programming solutions describe the same optimum.

use crate::error::{Error, Result};
use crate::grid::SolutionGrid;
use crate::market::{MarketModel, Rates};
use crate::odes::EmbeddingParams;
use serde::{Deserialize, Serialize};

/// Which derivation route produced the gain/shift pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicySide {
    /// adjoint ansatz route: pair (phi, psi)
    Mp,
    /// value-function route: pair (P, Q)
    Dpp,
}

/// Optimal feedback law `u(t, y) = (rho - mu)(g(t) y + s(t) - 1/sqrt(w)) / (g(t) Lambda(t))`
/// where `(g, s)` is either `(phi, psi)` or `(P, Q)`.
#[derive(Debug, Clone)]
pub struct FeedbackPolicy {
    rates: Rates,
    params: EmbeddingParams,
    gain: SolutionGrid,
    shift: SolutionGrid,
    side: PolicySide,
}

impl FeedbackPolicy {
    pub fn new(
        model: &MarketModel,
        params: EmbeddingParams,
        gain: SolutionGrid,
        shift: SolutionGrid,
        side: PolicySide,
    ) -> Result<Self> {
        if gain.spec != shift.spec {
            return Err(Error::Grid("gain and shift grids must share one spec".into()));
        }
        if let Some(index) = gain.values.iter().position(|&v| v <= 0.0) {
            return Err(Error::NonPositiveP { index });
        }
        Ok(Self { rates: model.rates(), params, gain, shift, side })
    }

    pub fn mp(
        model: &MarketModel,
        params: EmbeddingParams,
        phi: SolutionGrid,
        psi: SolutionGrid,
    ) -> Result<Self> {
        Self::new(model, params, phi, psi, PolicySide::Mp)
    }

    pub fn dpp(
        model: &MarketModel,
        params: EmbeddingParams,
        p: SolutionGrid,
        q: SolutionGrid,
    ) -> Result<Self> {
        Self::new(model, params, p, q, PolicySide::Dpp)
    }

    pub fn side(&self) -> PolicySide {
        self.side
    }

    pub fn params(&self) -> &EmbeddingParams {
        &self.params
    }

    pub fn gain(&self) -> &SolutionGrid {
        &self.gain
    }

    pub fn shift(&self) -> &SolutionGrid {
        &self.shift
    }

    pub(crate) fn rates(&self) -> &Rates {
        &self.rates
    }

    /// Optimal control in embedded units at embedded state `y`.
    pub fn feedback_u(&self, t: f64, y: f64) -> Result<f64> {
        let g = self.gain.value(t)?;
        let s = self.shift.value(t)?;
        let rho = self.rates.rho_at(t);
        let mu = self.rates.mu_at(t);
        let lam = self.rates.lambda_at(t);
        Ok((rho - mu) * (g * y + s - 1.0 / self.params.sqrt_w()) / (g * lam))
    }

    /// Optimal portfolio amount (currency) at wealth `x`; equals
    /// `feedback_u(t, sqrt(w)(x - beta)) / sqrt(w)` by the embedding.
    pub fn feedback_v(&self, t: f64, x: f64) -> Result<f64> {
        let sw = self.params.sqrt_w();
        Ok(self.feedback_u(t, sw * (x - self.params.beta))? / sw)
    }
}

/// Adjoint processes at one `(t, y, u)` point: the scalar discount `q`, the
/// first-order adjoint `p`, the Brownian coefficient `r`, and one jump
/// coefficient per mark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjointState {
    pub q: f64,
    pub p: f64,
    pub r: f64,
    pub rk: Vec<f64>,
}

/// Evaluates the adjoint ansatz `q = e^{-gamma t}`, `p = (phi y + psi) q`,
/// `r = phi sigma u q`, `R_i = phi u eta_i q`.
pub fn adjoint(policy: &FeedbackPolicy, t: f64, y_hat: f64, u_hat: f64) -> Result<AdjointState> {
    let q = (-policy.params.gamma * t).exp();
    let g = policy.gain.value(t)?;
    let s = policy.shift.value(t)?;
    let rates = &policy.rates;
    let rk = (0..rates.jump_rates.len())
        .map(|i| g * u_hat * rates.eta_at(i, t) * q)
        .collect();
    Ok(AdjointState {
        q,
        p: (g * y_hat + s) * q,
        r: g * rates.sigma_at(t) * u_hat * q,
        rk,
    })
}

/// Quadratic value function `V(t, y) = P(t) y^2 / 2 + Q(t) y + R(t)`.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    params: EmbeddingParams,
    p: SolutionGrid,
    q: SolutionGrid,
    r: SolutionGrid,
}

/// Value, gradient, and curvature at one `(t, y)` point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValueEval {
    pub v: f64,
    pub vy: f64,
    pub vyy: f64,
}

impl ValueFunction {
    pub fn new(
        params: EmbeddingParams,
        p: SolutionGrid,
        q: SolutionGrid,
        r: SolutionGrid,
    ) -> Result<Self> {
        if p.spec != q.spec || p.spec != r.spec {
            return Err(Error::Grid("P, Q, R grids must share one spec".into()));
        }
        if let Some(index) = p.values.iter().position(|&v| v <= 0.0) {
            return Err(Error::NonPositiveP { index });
        }
        Ok(Self { params, p, q, r })
    }

    pub fn params(&self) -> &EmbeddingParams {
        &self.params
    }

    /// Interpolated `(P, Q, R)` coefficients at `t`.
    pub fn coeffs_at(&self, t: f64) -> Result<(f64, f64, f64)> {
        Ok((self.p.value(t)?, self.q.value(t)?, self.r.value(t)?))
    }

    pub fn eval(&self, t: f64, y: f64) -> Result<ValueEval> {
        let (p, q, r) = self.coeffs_at(t)?;
        Ok(ValueEval { v: 0.5 * p * y * y + q * y + r, vy: p * y + q, vyy: p })
    }
}

/// Generalized Hamiltonian at `(t, y, u)` under the quadratic value ansatz.
/// The jump integral is the finite sum over marks of
/// `rate_i [V(t, y + u eta_i) - V(t, y) - u eta_i V_y(t, y)]`.
pub fn generalized_hamiltonian(
    model: &MarketModel,
    value: &ValueFunction,
    t: f64,
    y: f64,
    u: f64,
) -> Result<f64> {
    let params = value.params;
    let rates = model.rates();
    let rho = rates.rho_at(t);
    let mu = rates.mu_at(t);
    let sigma = rates.sigma_at(t);
    let sw = params.sqrt_w();
    let (pv, qv, rv) = value.coeffs_at(t)?;
    let v_at = |z: f64| 0.5 * pv * z * z + qv * z + rv;
    let v = v_at(y);
    let vy = pv * y + qv;

    let mut g = -vy * (rho * y + (mu - rho) * u + sw * params.beta * rho)
        - 0.5 * pv * u * u * sigma * sigma;
    for (i, &rate) in rates.jump_rates.iter().enumerate() {
        let jump = u * rates.eta_at(i, t);
        g -= rate * (v_at(y + jump) - v - jump * vy);
    }
    g += rho * (y / sw + params.beta) + (mu - rho) * u / sw + params.gamma * v;
    Ok(g)
}

/// One identity of the relationship theorem, with the worst error over the
/// sampled states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub identity: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst_t: f64,
    pub pass: bool,
}

/// Result of checking the three adjoint/value-function identities over a
/// sample of path states.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpDppReport {
    pub identities: Vec<IdentityCheck>,
    /// Worst |dH/du| at the optimal control over the sample; stationarity of
    /// the first-order Hamiltonian after substituting the adjoint ansatz.
    pub hamiltonian_stationarity: f64,
    pub states_checked: usize,
    pub pass: bool,
}

const MP_DPP_TOL: f64 = 1e-8;

struct IdentityTracker {
    name: &'static str,
    max_abs: f64,
    max_rel: f64,
    worst_t: f64,
}

impl IdentityTracker {
    fn new(name: &'static str) -> Self {
        Self { name, max_abs: 0.0, max_rel: 0.0, worst_t: 0.0 }
    }

    fn observe(&mut self, t: f64, lhs: f64, rhs: f64) {
        let abs = (lhs - rhs).abs();
        let rel = abs / lhs.abs().max(rhs.abs()).max(1.0);
        if rel > self.max_rel {
            self.max_rel = rel;
            self.worst_t = t;
        }
        self.max_abs = self.max_abs.max(abs);
    }

    fn finish(self) -> IdentityCheck {
        IdentityCheck {
            identity: self.name.to_string(),
            max_abs_err: self.max_abs,
            max_rel_err: self.max_rel,
            worst_t: self.worst_t,
            pass: self.max_rel <= MP_DPP_TOL,
        }
    }
}

/// Checks, over the given `(t, y)` states on the optimal trajectory, that the
/// adjoint processes computed from `(phi, psi)` coincide with the value
/// function derivatives computed from `(P, Q, R)`:
/// `p = V_y q`, `r = V_yy sigma u q`, and
/// `R_i = [V_y(t, y + u eta_i) - V_y(t, y)] q` per mark.
pub fn verify_mp_dpp(
    policy: &FeedbackPolicy,
    value: &ValueFunction,
    states: &[(f64, f64)],
) -> Result<MpDppReport> {
    let rates = policy.rates();
    let gamma = policy.params.gamma;
    let sw = policy.params.sqrt_w();
    let mut p_check = IdentityTracker::new("p = dV/dy * q");
    let mut r_check = IdentityTracker::new("r = d2V/dy2 * sigma * u * q");
    let mut jump_check = IdentityTracker::new("R(t,z) = [dV/dy(y + u eta) - dV/dy(y)] * q");
    let mut stationarity = 0.0f64;

    for &(t, y) in states {
        let u = policy.feedback_u(t, y)?;
        let adj = adjoint(policy, t, y, u)?;
        let (pv, qv, _) = value.coeffs_at(t)?;
        let qd = (-gamma * t).exp();
        let sigma = rates.sigma_at(t);
        let mu = rates.mu_at(t);
        let rho = rates.rho_at(t);

        p_check.observe(t, adj.p, (pv * y + qv) * qd);
        r_check.observe(t, adj.r, pv * sigma * u * qd);
        let mut jump_slope = 0.0;
        for (i, &rate) in rates.jump_rates.iter().enumerate() {
            let eta = rates.eta_at(i, t);
            let dpp_side = ((pv * (y + u * eta) + qv) - (pv * y + qv)) * qd;
            jump_check.observe(t, adj.rk[i], dpp_side);
            jump_slope += eta * adj.rk[i] * rate;
        }
        // dH/du after substituting the ansatz; zero at the optimum.
        let dh = (mu - rho) * adj.p + sigma * adj.r + jump_slope - adj.q * (mu - rho) / sw;
        stationarity = stationarity.max(dh.abs());
    }

    let identities = vec![p_check.finish(), r_check.finish(), jump_check.finish()];
    let pass = identities.iter().all(|c| c.pass);
    Ok(MpDppReport {
        identities,
        hamiltonian_stationarity: stationarity,
        states_checked: states.len(),
        pass,
    })
}
