//! Market primitives: deterministic piecewise-constant coefficient curves, a
//! finite-activity jump measure, and the derived rate functions used by every
//! downstream solver.
//!
//! The risky return carries a total instantaneous variance rate
//! `Lambda(t) = sigma(t)^2 + sum_i eta_i(t)^2 * rate_i`, and the squared
//! Sharpe-like ratio `theta(t) = (mu(t) - rho(t))^2 / Lambda(t)` drives all
//! frontier exponentials. `theta0` is the jump-free comparison rate with
//! `sigma^2` in the denominator.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Deterministic step function on `[0, T]`.
///
/// Intervals are left-closed, right-open; the last interval is closed so the
/// function is defined at `T` itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantFn {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseConstantFn {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Model("breakpoints need at least start and end".into()));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::Model(format!(
                "first breakpoint must be 0, got {}",
                breakpoints[0]
            )));
        }
        // negated comparison so NaN breakpoints are rejected
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Model("breakpoints must be strictly increasing".into()));
        }
        if values.len() != breakpoints.len() - 1 {
            return Err(Error::Model(format!(
                "expected {} interval values, got {}",
                breakpoints.len() - 1,
                values.len()
            )));
        }
        if breakpoints.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model("breakpoints and values must be finite".into()));
        }
        Ok(Self { breakpoints, values })
    }

    /// Constant value on `[0, t_end]`.
    pub fn constant(value: f64, t_end: f64) -> Result<Self> {
        Self::new(vec![0.0, t_end], vec![value])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t_end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Index of the interval containing `t` (last interval closed at `T`).
    fn interval_index(&self, t: f64) -> usize {
        let n = self.values.len();
        // partition_point returns the count of breakpoints <= t.
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        idx.saturating_sub(1).min(n - 1)
    }

    /// Value at `t`; `t` must lie in `[0, T]`.
    pub fn value_at(&self, t: f64) -> Result<f64> {
        let hi = self.t_end();
        if !(0.0..=hi).contains(&t) {
            return Err(Error::Domain { t, lo: 0.0, hi });
        }
        Ok(self.values[self.interval_index(t)])
    }

    /// Exact integral over `[a, b]` (a <= b, both inside `[0, T]`).
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        let hi = self.t_end();
        if !(0.0..=hi).contains(&a) {
            return Err(Error::Domain { t: a, lo: 0.0, hi });
        }
        if !(a..=hi).contains(&b) {
            return Err(Error::Domain { t: b, lo: a, hi });
        }
        let mut acc = 0.0;
        for (i, v) in self.values.iter().enumerate() {
            let lo = self.breakpoints[i].max(a);
            let up = self.breakpoints[i + 1].min(b);
            if up > lo {
                acc += v * (up - lo);
            }
        }
        Ok(acc)
    }
}

/// One atom of the jump intensity measure: arrival rate (events per year) and
/// the relative jump amplitude as a function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpMark {
    pub rate: f64,
    pub size: PiecewiseConstantFn,
}

/// Full problem data: horizon, risk-free rate, risky drift and volatility,
/// and a finite list of jump marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub horizon: f64,
    pub riskfree: PiecewiseConstantFn,
    pub drift: PiecewiseConstantFn,
    pub sigma: PiecewiseConstantFn,
    pub jumps: Vec<JumpMark>,
}

impl MarketModel {
    /// Constant-coefficient model, the most common test and demo shape.
    pub fn constant(
        horizon: f64,
        rho: f64,
        mu: f64,
        sigma: f64,
        jumps: &[(f64, f64)],
    ) -> Result<Self> {
        Ok(Self {
            horizon,
            riskfree: PiecewiseConstantFn::constant(rho, horizon)?,
            drift: PiecewiseConstantFn::constant(mu, horizon)?,
            sigma: PiecewiseConstantFn::constant(sigma, horizon)?,
            jumps: jumps
                .iter()
                .map(|&(rate, size)| {
                    Ok(JumpMark {
                        rate,
                        size: PiecewiseConstantFn::constant(size, horizon)?,
                    })
                })
                .collect::<Result<_>>()?,
        })
    }

    /// Checks every standing assumption, at every breakpoint of every
    /// coefficient. Piecewise-constant curves attain all their values at
    /// breakpoints, so this covers the whole of `[0, T]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Model(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        for (name, f) in [
            ("riskfree", &self.riskfree),
            ("drift", &self.drift),
            ("sigma", &self.sigma),
        ] {
            if f.t_end() != self.horizon {
                return Err(Error::Model(format!(
                    "{name} is defined on [0, {}], model horizon is {}",
                    f.t_end(),
                    self.horizon
                )));
            }
        }
        for (i, mark) in self.jumps.iter().enumerate() {
            if !(mark.rate >= 0.0 && mark.rate.is_finite()) {
                return Err(Error::Model(format!(
                    "jump mark {i} rate must be >= 0, got {}",
                    mark.rate
                )));
            }
            if mark.size.t_end() != self.horizon {
                return Err(Error::Model(format!(
                    "jump mark {i} size is defined on [0, {}], model horizon is {}",
                    mark.size.t_end(),
                    self.horizon
                )));
            }
        }
        let rates = self.rates();
        for (k, &t) in rates.breakpoints[..rates.breakpoints.len() - 1].iter().enumerate() {
            let rho = rates.rho[k];
            let mu = rates.mu[k];
            if rho <= 0.0 {
                return Err(Error::Model(format!("rho(t) <= 0 at t={t}: rho={rho}")));
            }
            if mu <= rho {
                return Err(Error::Model(format!(
                    "mu(t) <= rho(t) at t={t}: mu={mu}, rho={rho}"
                )));
            }
            if rates.lambda_cap[k] <= 0.0 {
                return Err(Error::Model(format!(
                    "Lambda(t) = 0 at t={t}: no diffusion and no jump variance"
                )));
            }
        }
        Ok(())
    }

    /// Validating constructor sugar for pipelines.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// `Lambda(t) = sigma(t)^2 + sum_i eta_i(t)^2 rate_i`.
    pub fn eval_lambda(&self, t: f64) -> Result<f64> {
        let sigma = self.sigma.value_at(t)?;
        let mut acc = sigma * sigma;
        for mark in &self.jumps {
            let size = mark.size.value_at(t)?;
            acc += size * size * mark.rate;
        }
        Ok(acc)
    }

    /// `theta(t) = (mu(t) - rho(t))^2 / Lambda(t)`.
    pub fn eval_theta(&self, t: f64) -> Result<f64> {
        let excess = self.drift.value_at(t)? - self.riskfree.value_at(t)?;
        Ok(excess * excess / self.eval_lambda(t)?)
    }

    /// `theta0(t) = (mu(t) - rho(t))^2 / sigma(t)^2`, the jump-free
    /// comparison rate. Undefined where sigma vanishes.
    pub fn eval_theta0(&self, t: f64) -> Result<f64> {
        let sigma = self.sigma.value_at(t)?;
        if sigma == 0.0 {
            return Err(Error::DegenerateVolatility { t });
        }
        let excess = self.drift.value_at(t)? - self.riskfree.value_at(t)?;
        Ok(excess * excess / (sigma * sigma))
    }

    /// Merged piecewise-constant view of all derived rates, for exact
    /// integrals and fast repeated evaluation.
    pub fn rates(&self) -> Rates {
        let mut breaks: Vec<f64> = Vec::new();
        breaks.extend_from_slice(self.riskfree.breakpoints());
        breaks.extend_from_slice(self.drift.breakpoints());
        breaks.extend_from_slice(self.sigma.breakpoints());
        for mark in &self.jumps {
            breaks.extend_from_slice(mark.size.breakpoints());
        }
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup();

        let m = breaks.len() - 1;
        let mut rho = Vec::with_capacity(m);
        let mut mu = Vec::with_capacity(m);
        let mut sigma = Vec::with_capacity(m);
        let mut lambda_cap = Vec::with_capacity(m);
        let mut theta = Vec::with_capacity(m);
        let mut eta = vec![Vec::with_capacity(m); self.jumps.len()];
        for k in 0..m {
            // Midpoint is interior to the merged interval, so lookups are
            // unambiguous even when a breakpoint is shared.
            let t = 0.5 * (breaks[k] + breaks[k + 1]);
            let r = self.riskfree.value_at(t).unwrap();
            let d = self.drift.value_at(t).unwrap();
            let s = self.sigma.value_at(t).unwrap();
            let mut lam = s * s;
            for (j, mark) in self.jumps.iter().enumerate() {
                let size = mark.size.value_at(t).unwrap();
                eta[j].push(size);
                lam += size * size * mark.rate;
            }
            rho.push(r);
            mu.push(d);
            sigma.push(s);
            lambda_cap.push(lam);
            theta.push(if lam > 0.0 { (d - r) * (d - r) / lam } else { f64::NAN });
        }
        Rates {
            breakpoints: breaks,
            rho,
            mu,
            sigma,
            lambda_cap,
            theta,
            eta,
            jump_rates: self.jumps.iter().map(|j| j.rate).collect(),
        }
    }
}

/// All derived rate curves on one merged breakpoint grid.
#[derive(Debug, Clone)]
pub struct Rates {
    pub breakpoints: Vec<f64>,
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub lambda_cap: Vec<f64>,
    pub theta: Vec<f64>,
    /// Per-mark jump amplitude values, outer index = mark.
    pub eta: Vec<Vec<f64>>,
    pub jump_rates: Vec<f64>,
}

impl Rates {
    pub fn t_end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    fn interval_index(&self, t: f64) -> usize {
        let m = self.rho.len();
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        idx.saturating_sub(1).min(m - 1)
    }

    pub fn rho_at(&self, t: f64) -> f64 {
        self.rho[self.interval_index(t)]
    }

    pub fn mu_at(&self, t: f64) -> f64 {
        self.mu[self.interval_index(t)]
    }

    pub fn sigma_at(&self, t: f64) -> f64 {
        self.sigma[self.interval_index(t)]
    }

    pub fn lambda_at(&self, t: f64) -> f64 {
        self.lambda_cap[self.interval_index(t)]
    }

    pub fn theta_at(&self, t: f64) -> f64 {
        self.theta[self.interval_index(t)]
    }

    pub fn eta_at(&self, mark: usize, t: f64) -> f64 {
        self.eta[mark][self.interval_index(t)]
    }

    /// Exact `int_a^b f` for a linear combination of the stored rates:
    /// `f = c_rho * rho + c_theta * theta + constant`.
    pub fn integral_combo(&self, a: f64, b: f64, c_rho: f64, c_theta: f64, constant: f64) -> f64 {
        debug_assert!(b >= a);
        let mut acc = 0.0;
        for k in 0..self.rho.len() {
            let lo = self.breakpoints[k].max(a);
            let up = self.breakpoints[k + 1].min(b);
            if up > lo {
                acc += (c_rho * self.rho[k] + c_theta * self.theta[k] + constant) * (up - lo);
            }
        }
        acc
    }

    /// Exact `int_a^b theta0`, failing where sigma vanishes.
    pub fn integral_theta0(&self, a: f64, b: f64) -> Result<f64> {
        let mut acc = 0.0;
        for k in 0..self.rho.len() {
            let lo = self.breakpoints[k].max(a);
            let up = self.breakpoints[k + 1].min(b);
            if up > lo {
                let s = self.sigma[k];
                if s == 0.0 {
                    return Err(Error::DegenerateVolatility { t: lo });
                }
                let excess = self.mu[k] - self.rho[k];
                acc += excess * excess / (s * s) * (up - lo);
            }
        }
        Ok(acc)
    }
}
