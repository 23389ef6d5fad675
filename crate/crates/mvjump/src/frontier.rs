//! Embedding-scalar resolution, the dynamic efficient frontier of the
//! recursive-utility problem, and the two static comparison parabolas.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, SolutionGrid};
use crate::market::MarketModel;
use crate::odes::{eval_c, solve_mean, solve_phi, solve_psi, solve_second_moment, EmbeddingParams};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One point of the efficient frontier sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub w: f64,
    pub beta: f64,
    pub lambda_embed: f64,
    pub mean_t: f64,
    pub var_t: f64,
}

/// Output of the wealth-shift fixed point `beta = 1/(2w) + E[X(T; beta)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaResolution {
    pub beta: f64,
    pub mean_t: f64,
    /// `|beta - 1/(2w) - E[X(T; beta)]|` from the confirmation solve.
    pub residual: f64,
}

/// Terminal mean under the optimal policy for a given shift `beta`.
fn mean_terminal(
    model: &MarketModel,
    w: f64,
    beta: f64,
    gamma: f64,
    x0: f64,
    phi: &SolutionGrid,
    spec: GridSpec,
) -> Result<f64> {
    let params = EmbeddingParams::new(w, beta, gamma, x0)?;
    let psi = solve_psi(model, &params, phi, spec)?;
    Ok(solve_mean(model, &params, &psi, spec)?.last())
}

/// Solves `beta = 1/(2w) + E[X(T; beta)]` exactly. The terminal mean is
/// affine in `beta` (the shift enters the dynamics only through the affine
/// source of the `psi` equation), so two probe solves pin the affine map and
/// the fixed point follows in closed form; one confirmation solve measures
/// the residual.
pub fn resolve_beta(
    model: &MarketModel,
    w: f64,
    gamma: f64,
    x0: f64,
    spec: GridSpec,
) -> Result<BetaResolution> {
    // negated comparison so NaN weights are rejected
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(w > 0.0) {
        return Err(Error::Model(format!("sweep weight must be > 0, got {w}")));
    }
    let params_any = EmbeddingParams::new(w, 0.0, gamma, x0)?;
    let phi = solve_phi(model, &params_any, spec)?;
    let m0 = mean_terminal(model, w, 0.0, gamma, x0, &phi, spec)?;
    let m1 = mean_terminal(model, w, 1.0, gamma, x0, &phi, spec)?;
    let beta = affine_fixed_point(0.5 / w, m0, m1)?;
    let mean_t = mean_terminal(model, w, beta, gamma, x0, &phi, spec)?;
    let residual = (beta - 0.5 / w - mean_t).abs();
    Ok(BetaResolution { beta, mean_t, residual })
}

/// Solves `beta = offset + m(beta)` for the affine map pinned by
/// `m(0) = m0`, `m(1) = m1`.
fn affine_fixed_point(offset: f64, m0: f64, m1: f64) -> Result<f64> {
    let slope = m1 - m0;
    let denom = 1.0 - slope;
    if denom.abs() <= 1e-12 {
        return Err(Error::SingularEmbedding { slope });
    }
    Ok((offset + m0) / denom)
}

/// Node-wise `Var X(t) = E[X^2](t) - (E[X](t))^2`, clamping values within
/// `1e-12` of zero and rejecting anything more negative.
pub fn variance_curve(mean: &SolutionGrid, second: &SolutionGrid) -> Result<SolutionGrid> {
    assert_eq!(mean.spec, second.spec, "grids must share one spec");
    let mut values = Vec::with_capacity(mean.values.len());
    for (i, (&m, &m2)) in mean.values.iter().zip(&second.values).enumerate() {
        let var = m2 - m * m;
        if var < -1e-12 {
            return Err(Error::NegativeVariance { t: mean.spec.node(i), value: var });
        }
        values.push(var.max(0.0));
    }
    SolutionGrid::new(mean.spec, values)
}

/// Cumulative machinery for the dynamic frontier formula
/// `Var X(t) = E(t) [x0^2 + int_0^t theta(s) C(s)^2 / E(s) ds] - m(t)^2`
/// with `E(t) = exp(int_0^t (2 rho - theta))`. The squared bracket of the
/// published formula equals `theta(s)^2 C(s)^2` via the mean equation, so the
/// integrand uses `C` analytically and no finite differences appear. `E` is
/// exact over the piecewise-constant rates; the time integral is trapezoidal
/// on the grid with `theta` frozen per panel (it is constant there once the
/// grid is aligned to the coefficient breakpoints).
struct RecursiveVariance<'a> {
    model: &'a MarketModel,
    params: &'a EmbeddingParams,
    mean: &'a SolutionGrid,
    psi: &'a SolutionGrid,
    growth: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<'a> RecursiveVariance<'a> {
    fn new(
        model: &'a MarketModel,
        params: &'a EmbeddingParams,
        mean: &'a SolutionGrid,
        psi: &'a SolutionGrid,
    ) -> Result<Self> {
        let spec = mean.spec;
        let rates = model.rates();
        let n = spec.n;
        let mut growth = Vec::with_capacity(n + 1);
        let mut integrand = Vec::with_capacity(n + 1);
        let mut acc_exp = 0.0;
        for i in 0..=n {
            if i > 0 {
                acc_exp += rates.integral_combo(spec.node(i - 1), spec.node(i), 2.0, -1.0, 0.0);
            }
            let e = acc_exp.exp();
            let c = eval_c(model, params, psi, spec.node(i))?;
            growth.push(e);
            integrand.push(c * c / e);
        }
        let mut cumulative = Vec::with_capacity(n + 1);
        cumulative.push(0.0);
        let h = spec.h();
        for i in 0..n {
            let theta = rates.theta_at(0.5 * (spec.node(i) + spec.node(i + 1)));
            let panel = 0.5 * h * theta * (integrand[i] + integrand[i + 1]);
            cumulative.push(cumulative[i] + panel);
        }
        Ok(Self { model, params, mean, psi, growth, cumulative })
    }

    fn at_node(&self, i: usize) -> f64 {
        let x0 = self.params.x0;
        let m = self.mean.values[i];
        self.growth[i] * (x0 * x0 + self.cumulative[i]) - m * m
    }

    fn at(&self, t: f64) -> Result<f64> {
        let spec = self.mean.spec;
        let h = spec.h();
        let i = (((t - spec.t0) / h) as usize).min(spec.n);
        let t_i = spec.node(i);
        if t == t_i {
            return Ok(self.at_node(i));
        }
        let rates = self.model.rates();
        let e_t = (rates.integral_combo(0.0, t, 2.0, -1.0, 0.0)).exp();
        let c_t = eval_c(self.model, self.params, self.psi, t)?;
        let c_i = eval_c(self.model, self.params, self.psi, t_i)?;
        let theta = rates.theta_at(0.5 * (t_i + t));
        let panel = 0.5
            * (t - t_i)
            * theta
            * (c_i * c_i / self.growth[i] + c_t * c_t / e_t);
        let x0 = self.params.x0;
        let m = self.mean.value(t)?;
        Ok(e_t * (x0 * x0 + self.cumulative[i] + panel) - m * m)
    }
}

/// Dynamic-frontier variance at one time from the closed formula.
pub fn recursive_frontier_variance(
    model: &MarketModel,
    params: &EmbeddingParams,
    mean: &SolutionGrid,
    psi: &SolutionGrid,
    t: f64,
) -> Result<f64> {
    RecursiveVariance::new(model, params, mean, psi)?.at(t)
}

/// Dynamic-frontier variance on every grid node.
pub fn recursive_variance_grid(
    model: &MarketModel,
    params: &EmbeddingParams,
    mean: &SolutionGrid,
    psi: &SolutionGrid,
) -> Result<SolutionGrid> {
    let rv = RecursiveVariance::new(model, params, mean, psi)?;
    let values = (0..=mean.spec.n).map(|i| rv.at_node(i)).collect();
    SolutionGrid::new(mean.spec, values)
}

/// Static frontier of the jump-free comparison problem:
/// `Var X(T) = (E[X(T)] - x0 e^{int rho})^2 / (e^{int theta0} - 1)`.
pub fn zhou_li_variance(model: &MarketModel, mean_t: f64, x0: f64) -> Result<f64> {
    let rates = model.rates();
    let t_end = rates.t_end();
    let denom = rates.integral_theta0(0.0, t_end)?.exp() - 1.0;
    let vertex = x0 * rates.integral_combo(0.0, t_end, 1.0, 0.0, 0.0).exp();
    let dev = mean_t - vertex;
    Ok(dev * dev / denom)
}

/// Static frontier with the jump-adjusted rate `theta` in the exponent.
pub fn jump_frontier_variance(model: &MarketModel, mean_t: f64, x0: f64) -> Result<f64> {
    let rates = model.rates();
    let t_end = rates.t_end();
    let denom = rates.integral_combo(0.0, t_end, 0.0, 1.0, 0.0).exp() - 1.0;
    let vertex = x0 * rates.integral_combo(0.0, t_end, 1.0, 0.0, 0.0).exp();
    let dev = mean_t - vertex;
    Ok(dev * dev / denom)
}

/// One sweep entry; failures are recorded, they do not abort the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub w: f64,
    pub point: Option<FrontierPoint>,
    pub status: String,
}

/// Traces the frontier over a grid of embedding weights. Points are computed
/// independently (in parallel) and reported in the order of `w_grid`.
pub fn sweep_frontier(
    model: &MarketModel,
    gamma: f64,
    x0: f64,
    w_grid: &[f64],
    spec: GridSpec,
) -> Vec<SweepPoint> {
    w_grid
        .par_iter()
        .map(|&w| match frontier_point(model, gamma, x0, w, spec) {
            Ok(point) => SweepPoint { w, point: Some(point), status: "ok".to_string() },
            Err(e) => SweepPoint { w, point: None, status: e.to_string() },
        })
        .collect()
}

fn frontier_point(
    model: &MarketModel,
    gamma: f64,
    x0: f64,
    w: f64,
    spec: GridSpec,
) -> Result<FrontierPoint> {
    let resolution = resolve_beta(model, w, gamma, x0, spec)?;
    let params = EmbeddingParams::new(w, resolution.beta, gamma, x0)?;
    let phi = solve_phi(model, &params, spec)?;
    let psi = solve_psi(model, &params, &phi, spec)?;
    let mean = solve_mean(model, &params, &psi, spec)?;
    let second = solve_second_moment(model, &params, &psi, spec)?;
    let var = variance_curve(&mean, &second)?;
    let mean_t = mean.last();
    Ok(FrontierPoint {
        w,
        beta: resolution.beta,
        lambda_embed: 1.0 + 2.0 * w * mean_t,
        mean_t,
        var_t: var.last(),
    })
}

/// Log-spaced weight grid, the default sweep parameterization.
pub fn log_spaced_weights(min: f64, max: f64, count: usize) -> Vec<f64> {
    assert!(min > 0.0 && max > min && count >= 2);
    let (lo, hi) = (min.ln(), max.ln());
    (0..count)
        .map(|i| (lo + (hi - lo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> MarketModel {
        MarketModel::constant(1.0, 0.06, 0.12, 0.15, &[(2.0, 0.10)])
            .unwrap()
            .validated()
            .unwrap()
    }

    fn spec(n: usize) -> GridSpec {
        GridSpec::new(0.0, 1.0, n).unwrap()
    }

    fn solved(
        model: &MarketModel,
        params: &EmbeddingParams,
        s: GridSpec,
    ) -> (SolutionGrid, SolutionGrid, SolutionGrid) {
        let phi = solve_phi(model, params, s).unwrap();
        let psi = solve_psi(model, params, &phi, s).unwrap();
        let mean = solve_mean(model, params, &psi, s).unwrap();
        let second = solve_second_moment(model, params, &psi, s).unwrap();
        (psi, mean, second)
    }

    #[test]
    fn resolve_beta_confirms_fixed_point() {
        let model = fixture();
        let res = resolve_beta(&model, 1.0, 0.2, 1.0, spec(4000)).unwrap();
        assert!(res.residual <= 1e-9, "residual {}", res.residual);
        assert!(res.beta > 1.0 && res.beta < 3.0, "beta = {}", res.beta);
    }

    #[test]
    fn resolve_beta_agrees_with_fixed_point_iteration() {
        let model = fixture();
        let s = spec(2000);
        let res = resolve_beta(&model, 1.0, 0.2, 1.0, s).unwrap();
        let params_any = EmbeddingParams::new(1.0, 0.0, 0.2, 1.0).unwrap();
        let phi = solve_phi(&model, &params_any, s).unwrap();
        let mut beta = 1.0; // start from x0
        for _ in 0..100 {
            let m = mean_terminal(&model, 1.0, beta, 0.2, 1.0, &phi, s).unwrap();
            beta = 0.5 + m;
        }
        assert!((beta - res.beta).abs() <= 1e-8, "{beta} vs {}", res.beta);
    }

    #[test]
    fn affine_fixed_point_solves_and_flags_unit_slope() {
        // beta = 0.5 + (1 + 0.25 beta)  =>  beta = 2
        assert!((affine_fixed_point(0.5, 1.0, 1.25).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(
            affine_fixed_point(0.5, 1.0, 2.0),
            Err(Error::SingularEmbedding { .. })
        ));
    }

    #[test]
    fn zhou_li_requires_nonzero_volatility() {
        // jumps keep Lambda positive so the model validates, but the
        // jump-free comparison rate is undefined
        let model = MarketModel::constant(1.0, 0.06, 0.12, 0.0, &[(2.0, 0.10)])
            .unwrap()
            .validated()
            .unwrap();
        assert!(matches!(
            zhou_li_variance(&model, 1.2, 1.0),
            Err(Error::DegenerateVolatility { .. })
        ));
        // the jump-adjusted parabola is still defined
        assert!(jump_frontier_variance(&model, 1.2, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn half_inverse_weight_term_decreases() {
        let mut last = f64::INFINITY;
        for w in [0.5, 1.0, 2.0, 4.0] {
            let term = 0.5 / w;
            assert!(term < last);
            last = term;
        }
    }

    #[test]
    fn variance_zero_at_start_and_nonnegative() {
        let model = fixture();
        let res = resolve_beta(&model, 1.0, 0.2, 1.0, spec(4000)).unwrap();
        let params = EmbeddingParams::new(1.0, res.beta, 0.2, 1.0).unwrap();
        let (_, mean, second) = solved(&model, &params, spec(4000));
        let var = variance_curve(&mean, &second).unwrap();
        assert_eq!(var.first(), 0.0);
        assert!(var.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn variance_curve_rejects_genuinely_negative() {
        let s = spec(2);
        let mean = SolutionGrid::new(s, vec![1.0, 1.0, 1.0]).unwrap();
        let second = SolutionGrid::new(s, vec![1.0, 0.5, 1.0]).unwrap();
        assert!(matches!(
            variance_curve(&mean, &second),
            Err(Error::NegativeVariance { .. })
        ));
    }

    #[test]
    fn dynamic_formula_matches_moment_variance() {
        let model = fixture();
        let s = spec(10_000);
        let res = resolve_beta(&model, 1.0, 0.2, 1.0, s).unwrap();
        let params = EmbeddingParams::new(1.0, res.beta, 0.2, 1.0).unwrap();
        let (psi, mean, second) = solved(&model, &params, s);
        let direct = variance_curve(&mean, &second).unwrap();
        let dynamic = recursive_variance_grid(&model, &params, &mean, &psi).unwrap();
        let worst = direct.max_abs_diff(&dynamic);
        assert!(worst <= 1e-9, "max |direct - dynamic| = {worst}");
        // and the t = 0 value is exactly x0^2 * 1 - x0^2 = 0
        assert!(dynamic.first().abs() < 1e-15);
        // point evaluation off the nodes stays close to the node values
        let mid = recursive_frontier_variance(&model, &params, &mean, &psi, 0.500037).unwrap();
        assert!((mid - direct.value(0.500037).unwrap()).abs() < 1e-7);
    }

    #[test]
    fn bracket_identity_from_mean_equation() {
        let model = fixture();
        let s = spec(2000);
        let res = resolve_beta(&model, 1.0, 0.2, 1.0, s).unwrap();
        let params = EmbeddingParams::new(1.0, res.beta, 0.2, 1.0).unwrap();
        let (psi, mean, _) = solved(&model, &params, s);
        let rates = model.rates();
        for k in 0..100 {
            let t = s.node(k * 20);
            let m = mean.value(t).unwrap();
            let c = eval_c(&model, &params, &psi, t).unwrap();
            let theta = rates.theta_at(t);
            let rho = rates.rho_at(t);
            let d_mean = (rho - theta) * m - theta * c; // analytic rhs, no finite differences
            let bracket = (rho - theta) * m - d_mean;
            assert!((bracket - theta * c).abs() <= 1e-10);
        }
    }

    #[test]
    fn zhou_li_hand_value_and_symmetry() {
        let model = MarketModel::constant(1.0, 0.06, 0.12, 0.15, &[])
            .unwrap()
            .validated()
            .unwrap();
        // (1.2 - e^0.06)^2 / (e^0.16 - 1), recomputed by hand
        let got = zhou_li_variance(&model, 1.2, 1.0).unwrap();
        let want = (1.2 - 0.06f64.exp()).powi(2) / (0.16f64.exp() - 1.0);
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.110017).abs() < 1e-6);

        let vertex = 0.06f64.exp();
        assert!(zhou_li_variance(&model, vertex, 1.0).unwrap().abs() < 1e-30);
        let up = zhou_li_variance(&model, vertex + 0.3, 1.0).unwrap();
        let down = zhou_li_variance(&model, vertex - 0.3, 1.0).unwrap();
        assert!((up - down).abs() < 1e-15);
    }

    #[test]
    fn jump_frontier_reduces_and_dominates() {
        let no_jumps = MarketModel::constant(1.0, 0.06, 0.12, 0.15, &[])
            .unwrap()
            .validated()
            .unwrap();
        for k in 0..=100 {
            let mean_t = 0.9 + 0.6 * k as f64 / 100.0;
            let a = jump_frontier_variance(&no_jumps, mean_t, 1.0).unwrap();
            let b = zhou_li_variance(&no_jumps, mean_t, 1.0).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }

        let jumps = fixture();
        let vertex = 0.06f64.exp();
        for k in 0..=100 {
            let mean_t = 0.9 + 0.6 * k as f64 / 100.0;
            let with = jump_frontier_variance(&jumps, mean_t, 1.0).unwrap();
            let without = zhou_li_variance(&jumps, mean_t, 1.0).unwrap();
            if (mean_t - vertex).abs() > 1e-3 {
                assert!(with > without, "at mean_T = {mean_t}");
            }
        }
    }

    #[test]
    fn static_frontiers_are_convex_parabolas() {
        let model = fixture();
        for f in [zhou_li_variance, jump_frontier_variance] {
            let (a, b, c) = (
                f(&model, 1.0, 1.0).unwrap(),
                f(&model, 1.15, 1.0).unwrap(),
                f(&model, 1.3, 1.0).unwrap(),
            );
            assert!(a + c >= 2.0 * b - 1e-15);
        }
    }

    #[test]
    fn sweep_invariants_hold_per_point() {
        let model = fixture();
        let weights = log_spaced_weights(0.1, 10.0, 8);
        let sweep = sweep_frontier(&model, 0.2, 1.0, &weights, spec(2000));
        assert_eq!(sweep.len(), 8);
        for (entry, &w) in sweep.iter().zip(&weights) {
            assert_eq!(entry.w, w);
            assert_eq!(entry.status, "ok");
            let p = entry.point.unwrap();
            assert!((p.lambda_embed - (1.0 + 2.0 * p.w * p.mean_t)).abs() <= 1e-9);
            assert!((p.beta - p.lambda_embed / (2.0 * p.w)).abs() <= 1e-9);
            assert!(p.var_t >= 0.0);
        }
    }
}
