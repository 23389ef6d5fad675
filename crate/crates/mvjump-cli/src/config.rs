//! Run-configuration ingestion: one self-describing TOML document per run,
//! versioned with `schema_version`, validated into solver-ready types.

use anyhow::{anyhow, bail, Context, Result};
use mvjump::frontier::log_spaced_weights;
use mvjump::sim::SimConfig;
use mvjump::{JumpMark, MarketModel, PiecewiseConstantFn};
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    market: Option<RawMarket>,
    embedding: Option<RawEmbedding>,
    solver: Option<RawSolver>,
    sim: Option<RawSim>,
    output: Option<RawOutput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMarket {
    horizon: Option<f64>,
    riskfree: Option<RawCoefficient>,
    drift: Option<RawCoefficient>,
    sigma: Option<RawCoefficient>,
    #[serde(default)]
    jumps: Vec<RawJump>,
}

/// A coefficient is either a constant or an explicit step function.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawCoefficient {
    Constant(f64),
    Piecewise { breakpoints: Vec<f64>, values: Vec<f64> },
}

impl RawCoefficient {
    fn build(self, horizon: f64, field: &str) -> Result<PiecewiseConstantFn> {
        match self {
            RawCoefficient::Constant(v) => PiecewiseConstantFn::constant(v, horizon)
                .map_err(|e| anyhow!("{field}: {e}")),
            RawCoefficient::Piecewise { breakpoints, values } => {
                PiecewiseConstantFn::new(breakpoints, values)
                    .map_err(|e| anyhow!("{field}: {e}"))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJump {
    rate: Option<f64>,
    size: Option<RawCoefficient>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEmbedding {
    w: Option<f64>,
    w_grid: Option<RawWGrid>,
    gamma: Option<f64>,
    x0: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWGrid {
    min: f64,
    max: f64,
    points: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    n_ode: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    n_paths: Option<usize>,
    dt: Option<f64>,
    seed: Option<u64>,
    antithetic: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

/// Validated run configuration with defaults applied.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: MarketModel,
    pub w: Option<f64>,
    pub w_grid: Option<Vec<f64>>,
    pub gamma: f64,
    pub x0: f64,
    pub n_ode: usize,
    pub sim: SimConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// The single weight, required by `solve`, `simulate`, and `verify`.
    pub fn require_w(&self) -> Result<f64> {
        self.w
            .ok_or_else(|| anyhow!("field `embedding.w` is required for this command"))
    }

    /// The sweep weights, defaulting to 32 log-spaced points in [0.1, 10].
    pub fn sweep_weights(&self) -> Vec<f64> {
        self.w_grid
            .clone()
            .unwrap_or_else(|| log_spaced_weights(0.1, 10.0, 32))
    }
}

fn require<T>(value: Option<T>, field: &str) -> Result<T> {
    value.ok_or_else(|| anyhow!("missing field `{field}`"))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let raw: RawConfig = toml::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;

    if let Some(v) = raw.schema_version {
        if v != SCHEMA_VERSION {
            bail!("unsupported schema_version {v}; this build reads version {SCHEMA_VERSION}");
        }
    }

    let market = require(raw.market, "market")?;
    let horizon = require(market.horizon, "market.horizon")?;
    let riskfree = require(market.riskfree, "market.riskfree")?.build(horizon, "market.riskfree")?;
    let drift = require(market.drift, "market.drift")?.build(horizon, "market.drift")?;
    let sigma = require(market.sigma, "market.sigma")?.build(horizon, "market.sigma")?;
    let mut jumps = Vec::with_capacity(market.jumps.len());
    for (i, jump) in market.jumps.into_iter().enumerate() {
        let rate = require(jump.rate, &format!("market.jumps[{i}].rate"))?;
        let size = require(jump.size, &format!("market.jumps[{i}].size"))?
            .build(horizon, &format!("market.jumps[{i}].size"))?;
        jumps.push(JumpMark { rate, size });
    }
    let model = MarketModel { horizon, riskfree, drift, sigma, jumps }
        .validated()
        .context("validating market")?;

    let embedding = require(raw.embedding, "embedding")?;
    if embedding.w.is_some() && embedding.w_grid.is_some() {
        bail!("embedding must set exactly one of `w` and `w_grid`, not both");
    }
    let w_grid = match embedding.w_grid {
        Some(g) => {
            if !(g.min > 0.0 && g.max > g.min && g.points >= 2) {
                bail!("embedding.w_grid requires 0 < min < max and points >= 2");
            }
            Some(log_spaced_weights(g.min, g.max, g.points))
        }
        None => None,
    };
    let gamma = require(embedding.gamma, "embedding.gamma")?;
    let x0 = require(embedding.x0, "embedding.x0")?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        bail!("embedding.gamma must be finite and >= 0, got {gamma}");
    }
    if !(x0 > 0.0 && x0.is_finite()) {
        bail!("embedding.x0 must be finite and > 0, got {x0}");
    }
    if let Some(w) = embedding.w {
        if !(w > 0.0 && w.is_finite()) {
            bail!("embedding.w must be finite and > 0, got {w}");
        }
    }

    let n_ode = raw.solver.and_then(|s| s.n_ode).unwrap_or(10_000);
    if n_ode < 2 {
        bail!("solver.n_ode must be at least 2, got {n_ode}");
    }

    let sim_raw = raw.sim;
    let sim = SimConfig {
        n_paths: sim_raw.as_ref().and_then(|s| s.n_paths).unwrap_or(100_000),
        dt: sim_raw.as_ref().and_then(|s| s.dt).unwrap_or(1e-3),
        seed: sim_raw.as_ref().and_then(|s| s.seed).unwrap_or(42),
        antithetic: sim_raw.as_ref().and_then(|s| s.antithetic).unwrap_or(false),
    };
    sim.steps(horizon)
        .map_err(|e| anyhow!("sim: {e}"))?;

    let out_dir = raw
        .output
        .and_then(|o| o.dir)
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(RunConfig { model, w: embedding.w, w_grid, gamma, x0, n_ode, sim, out_dir })
}
