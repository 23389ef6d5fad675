//! Monte Carlo validation layer: Euler scheme for the controlled wealth
//! dynamics with compound-Poisson jumps, the discounted estimator of the
//! recursive utility, and a policy-perturbation optimality audit.
//!
//! Reproducibility contract: path `i` draws from a dedicated stream derived
//! deterministically from `(seed, i)`, and ensemble reductions are
//! fixed-order pairwise sums over the path index, so results are
//! bit-identical for a given configuration regardless of how many workers
//! run the paths.

use crate::control::FeedbackPolicy;
use crate::error::{Error, Result};
use crate::market::MarketModel;
use crate::odes::EmbeddingParams;
use rand::distributions::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Monte Carlo run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    /// Number of Euler steps; `dt` must divide the horizon.
    pub fn steps(&self, horizon: f64) -> Result<usize> {
        if self.n_paths < 1 {
            return Err(Error::SimConfig("n_paths must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::SimConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        let steps = (horizon / self.dt).round();
        if steps < 1.0 || (steps * self.dt - horizon).abs() > 1e-9 {
            return Err(Error::SimConfig(format!(
                "dt = {} does not divide the horizon {horizon}",
                self.dt
            )));
        }
        Ok(steps as usize)
    }
}

/// Anything that maps `(t, wealth)` to a portfolio amount.
pub trait ControlLaw: Sync {
    fn amount(&self, t: f64, wealth: f64) -> f64;
}

impl ControlLaw for FeedbackPolicy {
    fn amount(&self, t: f64, wealth: f64) -> f64 {
        self.feedback_v(t, wealth).expect("policy grids cover [0, T]")
    }
}

/// The base policy scaled by `1 + eps`; the perturbation family of the
/// optimality audit.
pub struct ScaledPolicy<'a> {
    pub base: &'a FeedbackPolicy,
    pub factor: f64,
}

impl ControlLaw for ScaledPolicy<'_> {
    fn amount(&self, t: f64, wealth: f64) -> f64 {
        self.factor * self.base.amount(t, wealth)
    }
}

/// Constant portfolio amount, useful for calibration tests.
pub struct ConstantControl(pub f64);

impl ControlLaw for ConstantControl {
    fn amount(&self, _t: f64, _wealth: f64) -> f64 {
        self.0
    }
}

/// Summary statistics of a path ensemble. Standard errors are sample
/// standard deviations divided by the square root of the included path count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub excluded_paths: usize,
    #[serde(rename = "mean_T")]
    pub mean_t: f64,
    pub se_mean: f64,
    #[serde(rename = "var_T")]
    pub var_t: f64,
    pub se_var: f64,
    #[serde(rename = "Y0_hat")]
    pub y0_hat: f64,
    #[serde(rename = "se_Y0")]
    pub se_y0: f64,
}

/// Simulated ensemble: per-path terminal wealth and recursive-utility
/// functional samples, plus the deterministic summary.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub times: Vec<f64>,
    pub terminal_wealth: Vec<f64>,
    pub utility: Vec<f64>,
    pub jump_counts: Vec<u64>,
    pub excluded: Vec<bool>,
    pub summary: EnsembleSummary,
}

/// Fixed-order pairwise summation; deterministic and accurate for large
/// ensembles.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

fn splitmix64(state: &mut u64) {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
}

fn splitmix64_next(state: &mut u64) -> u64 {
    splitmix64(state);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for one path, derived deterministically from
/// `(seed, stream index)`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed ^ 0x6A09_E667_F3BC_C908u64.wrapping_mul(stream.wrapping_add(1));
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64_next(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

struct StepCoeffs {
    times: Vec<f64>,
    rho: Vec<f64>,
    excess: Vec<f64>,
    sigma: Vec<f64>,
    discount: Vec<f64>,
    /// eta[mark][step]
    eta: Vec<Vec<f64>>,
    /// expected jump count per step, per mark
    mean_counts: Vec<f64>,
    poissons: Vec<Option<Poisson<f64>>>,
}

fn precompute(model: &MarketModel, params: &EmbeddingParams, cfg: &SimConfig) -> Result<StepCoeffs> {
    let steps = cfg.steps(model.horizon)?;
    let rates = model.rates();
    let dt = cfg.dt;
    let mut out = StepCoeffs {
        times: Vec::with_capacity(steps + 1),
        rho: Vec::with_capacity(steps),
        excess: Vec::with_capacity(steps),
        sigma: Vec::with_capacity(steps),
        discount: Vec::with_capacity(steps),
        eta: vec![Vec::with_capacity(steps); rates.jump_rates.len()],
        mean_counts: rates.jump_rates.iter().map(|r| r * dt).collect(),
        poissons: rates
            .jump_rates
            .iter()
            .map(|&r| {
                if r > 0.0 {
                    Some(Poisson::new(r * dt).expect("positive rate"))
                } else {
                    None
                }
            })
            .collect(),
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        out.times.push(t);
        out.rho.push(rates.rho_at(t));
        out.excess.push(rates.mu_at(t) - rates.rho_at(t));
        out.sigma.push(rates.sigma_at(t));
        out.discount.push((-params.gamma * t).exp());
        for (j, eta) in out.eta.iter_mut().enumerate() {
            eta.push(rates.eta_at(j, t));
        }
    }
    out.times.push(model.horizon);
    Ok(out)
}

struct PathOutcome {
    terminal: f64,
    utility: f64,
    jumps: u64,
    excluded: bool,
}

fn run_path(
    coeffs: &StepCoeffs,
    params: &EmbeddingParams,
    law: &impl ControlLaw,
    cfg: &SimConfig,
    path: usize,
) -> PathOutcome {
    let stream = if cfg.antithetic { (path / 2) as u64 } else { path as u64 };
    let negate = cfg.antithetic && path % 2 == 1;
    let mut rng = path_rng(cfg.seed, stream);
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let steps = coeffs.rho.len();
    let marks = coeffs.mean_counts.len();
    let horizon = *coeffs.times.last().unwrap();

    let mut x = params.x0;
    let mut reward = 0.0;
    let mut jumps = 0u64;
    for k in 0..steps {
        let t = coeffs.times[k];
        let v = law.amount(t, x);
        // draw order per step is fixed: Brownian first, then one Poisson
        // count per mark in mark order
        let mut z: f64 = StandardNormal.sample(&mut rng);
        if negate {
            z = -z;
        }
        let mut jump_term = 0.0;
        for j in 0..marks {
            let count = match &coeffs.poissons[j] {
                Some(dist) => dist.sample(&mut rng),
                None => 0.0,
            };
            jumps += count as u64;
            jump_term += coeffs.eta[j][k] * (count - coeffs.mean_counts[j]);
        }
        let drift = coeffs.rho[k] * x + coeffs.excess[k] * v;
        reward += coeffs.discount[k] * drift * dt;
        x += drift * dt + coeffs.sigma[k] * v * sqrt_dt * z + v * jump_term;
        if !x.is_finite() {
            return PathOutcome { terminal: f64::NAN, utility: f64::NAN, jumps, excluded: true };
        }
    }
    let y_t = params.sqrt_w() * (x - params.beta);
    let utility = reward + (-params.gamma * horizon).exp() * (-0.5 * y_t * y_t);
    if !utility.is_finite() {
        return PathOutcome { terminal: f64::NAN, utility: f64::NAN, jumps, excluded: true };
    }
    PathOutcome { terminal: x, utility, jumps, excluded: false }
}

fn masked(values: &[f64], excluded: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(excluded)
        .filter_map(|(&v, &ex)| (!ex).then_some(v))
        .collect()
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = pairwise_sum(values) / n as f64;
    if n < 2 {
        return (mean, f64::INFINITY);
    }
    let centered: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&centered) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Euler simulation of the wealth dynamics under the given control law.
/// Per-path streams and fixed-order reductions make the result bit-identical
/// across worker counts.
pub fn simulate(
    model: &MarketModel,
    params: &EmbeddingParams,
    law: &impl ControlLaw,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    let coeffs = precompute(model, params, cfg)?;
    let outcomes: Vec<PathOutcome> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|i| run_path(&coeffs, params, law, cfg, i))
        .collect();

    let terminal_wealth: Vec<f64> = outcomes.iter().map(|o| o.terminal).collect();
    let utility: Vec<f64> = outcomes.iter().map(|o| o.utility).collect();
    let jump_counts: Vec<u64> = outcomes.iter().map(|o| o.jumps).collect();
    let excluded: Vec<bool> = outcomes.iter().map(|o| o.excluded).collect();
    let excluded_paths = excluded.iter().filter(|&&e| e).count();

    let terminals = masked(&terminal_wealth, &excluded);
    let utilities = masked(&utility, &excluded);
    let n = terminals.len().max(1);
    let (mean_t, se_mean) = mean_and_se(&terminals);
    let (y0_hat, se_y0) = mean_and_se(&utilities);

    // unbiased sample variance and its standard error from central moments
    let centered2: Vec<f64> = terminals.iter().map(|v| (v - mean_t).powi(2)).collect();
    let centered4: Vec<f64> = terminals.iter().map(|v| (v - mean_t).powi(4)).collect();
    let m2 = pairwise_sum(&centered2) / n as f64;
    let m4 = pairwise_sum(&centered4) / n as f64;
    let var_t = if n > 1 { pairwise_sum(&centered2) / (n - 1) as f64 } else { 0.0 };
    let se_var = if n > 3 {
        ((m4 - m2 * m2 * (n as f64 - 3.0) / (n as f64 - 1.0)) / n as f64).max(0.0).sqrt()
    } else {
        f64::INFINITY
    };

    Ok(PathEnsemble {
        times: coeffs.times,
        terminal_wealth,
        utility,
        jump_counts,
        excluded,
        summary: EnsembleSummary {
            n_paths: cfg.n_paths,
            dt: cfg.dt,
            seed: cfg.seed,
            excluded_paths,
            mean_t,
            se_mean,
            var_t,
            se_var,
            y0_hat,
            se_y0,
        },
    })
}

/// Sample mean and standard error of the discounted recursive-utility
/// functional carried by the ensemble.
pub fn estimate_y0(ensemble: &PathEnsemble) -> (f64, f64) {
    mean_and_se(&masked(&ensemble.utility, &ensemble.excluded))
}

/// One row of the perturbation audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub eps: f64,
    /// estimated cost `-Y_eps(0)`
    pub cost: f64,
    pub se_cost: f64,
    /// paired difference `cost(eps) - cost(0)` under common random numbers
    pub delta_cost: f64,
    pub paired_se: f64,
    pub pass: bool,
}

/// Perturbation audit report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub rows: Vec<PerturbationRow>,
    pub pass: bool,
}

/// Simulates the scaled policies `(1 + eps) v` with common random numbers and
/// checks that no perturbation beats the unperturbed cost by more than three
/// paired standard errors.
pub fn perturbation_optimality_check(
    model: &MarketModel,
    params: &EmbeddingParams,
    policy: &FeedbackPolicy,
    cfg: &SimConfig,
    eps_grid: &[f64],
) -> Result<PerturbationReport> {
    let base = simulate(model, params, policy, cfg)?;
    let base_costs: Vec<f64> = base.utility.iter().map(|u| -u).collect();
    let (base_cost, base_se) = {
        let vals = masked(&base_costs, &base.excluded);
        mean_and_se(&vals)
    };

    let mut eps_all: Vec<f64> = eps_grid.to_vec();
    if !eps_all.contains(&0.0) {
        eps_all.push(0.0);
    }
    eps_all.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let mut rows = Vec::with_capacity(eps_all.len());
    for &eps in &eps_all {
        if eps == 0.0 {
            rows.push(PerturbationRow {
                eps,
                cost: base_cost,
                se_cost: base_se,
                delta_cost: 0.0,
                paired_se: 0.0,
                pass: true,
            });
            continue;
        }
        let scaled = ScaledPolicy { base: policy, factor: 1.0 + eps };
        let run = simulate(model, params, &scaled, cfg)?;
        let costs: Vec<f64> = run.utility.iter().map(|u| -u).collect();
        let both_ok: Vec<bool> = base
            .excluded
            .iter()
            .zip(&run.excluded)
            .map(|(&a, &b)| a || b)
            .collect();
        let deltas: Vec<f64> = costs
            .iter()
            .zip(&base_costs)
            .zip(&both_ok)
            .filter_map(|((&c, &b), &ex)| (!ex).then_some(c - b))
            .collect();
        let (delta_cost, paired_se) = mean_and_se(&deltas);
        let (cost, se_cost) = mean_and_se(&masked(&costs, &run.excluded));
        rows.push(PerturbationRow {
            eps,
            cost,
            se_cost,
            delta_cost,
            paired_se,
            pass: delta_cost >= -3.0 * paired_se,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(PerturbationReport { rows, pass })
}

/// `(t, y)` states along one simulated optimal path (stream 0), at `count`
/// evenly spaced step indices. Deterministic for a fixed seed; used to sample
/// verification states on the optimal trajectory.
pub fn sample_path_states(
    model: &MarketModel,
    params: &EmbeddingParams,
    policy: &FeedbackPolicy,
    cfg: &SimConfig,
    count: usize,
) -> Result<Vec<(f64, f64)>> {
    let coeffs = precompute(model, params, cfg)?;
    let steps = coeffs.rho.len();
    let dt = cfg.dt;
    let sqrt_dt = dt.sqrt();
    let marks = coeffs.mean_counts.len();
    let mut rng = path_rng(cfg.seed, 0);
    let sw = params.sqrt_w();

    // count - 1 evenly spaced interior indices plus the terminal state
    let interior = count.saturating_sub(1).max(1);
    let mut pick: Vec<usize> = (0..interior).map(|j| (j * steps) / interior).collect();
    pick.dedup();
    let mut states = Vec::with_capacity(pick.len());
    let mut x = params.x0;
    for k in 0..steps {
        if pick.binary_search(&k).is_ok() {
            states.push((coeffs.times[k], sw * (x - params.beta)));
        }
        let t = coeffs.times[k];
        let v = policy.amount(t, x);
        let z: f64 = StandardNormal.sample(&mut rng);
        let mut jump_term = 0.0;
        for j in 0..marks {
            let count = match &coeffs.poissons[j] {
                Some(dist) => dist.sample(&mut rng),
                None => 0.0,
            };
            jump_term += coeffs.eta[j][k] * (count - coeffs.mean_counts[j]);
        }
        let drift = coeffs.rho[k] * x + coeffs.excess[k] * v;
        x += drift * dt + coeffs.sigma[k] * v * sqrt_dt * z + v * jump_term;
        if !x.is_finite() {
            return Err(Error::SimConfig("state-sampling path diverged".into()));
        }
    }
    states.push((model.horizon, sw * (x - params.beta)));
    Ok(states)
}
