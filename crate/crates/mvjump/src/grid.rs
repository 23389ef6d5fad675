//! Uniform time grids carrying sampled scalar functions.
//!
//! Every backward and forward solve in this crate shares one grid spec, so
//! node-wise comparisons between independently computed functions need no
//! interpolation.

use crate::error::{Error, Result};
use crate::market::MarketModel;
use serde::{Deserialize, Serialize};

/// Specification of a uniform grid: `n + 1` nodes on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t0: f64,
    pub t1: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(t0: f64, t1: f64, n: usize) -> Result<Self> {
        // negated comparison so NaN endpoints are rejected
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(t0 < t1) || n < 1 {
            return Err(Error::Grid(format!(
                "need t0 < t1 and n >= 1, got t0={t0}, t1={t1}, n={n}"
            )));
        }
        Ok(Self { t0, t1, n })
    }

    /// Grid on `[0, T]` with at least `n_min` steps, refined so that every
    /// coefficient breakpoint of the model falls on a node. Breakpoints are
    /// matched through small-denominator rational approximation of `b/T`;
    /// if no alignment with a reasonable step count exists, `n_min` is used
    /// as requested.
    pub fn aligned_to_model(model: &MarketModel, n_min: usize) -> Result<Self> {
        let horizon = model.horizon;
        let rates = model.rates();
        let interior: Vec<f64> = rates.breakpoints[1..rates.breakpoints.len() - 1].to_vec();
        if interior.is_empty() {
            return Self::new(0.0, horizon, n_min.max(1));
        }
        let mut lcm: u64 = 1;
        for &b in &interior {
            let Some(q) = rational_denominator(b / horizon, 1e-9, 100_000) else {
                return Self::new(0.0, horizon, n_min.max(1));
            };
            lcm = lcm / gcd(lcm, q) * q;
            if lcm > 10_000_000 {
                return Self::new(0.0, horizon, n_min.max(1));
            }
        }
        let n = lcm * (n_min.max(1) as u64).div_ceil(lcm);
        Self::new(0.0, horizon, n as usize)
    }

    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n {
            self.t1
        } else {
            self.t0 + i as f64 * self.h()
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest denominator `q <= q_max` with `|x - p/q| <= tol`, via continued
/// fractions. `x` is expected in `(0, 1)`.
fn rational_denominator(x: f64, tol: f64, q_max: u64) -> Option<u64> {
    let (mut h0, mut h1) = (1u64, 0u64); // denominators of successive convergents
    let mut frac = x;
    for _ in 0..64 {
        let a = frac.floor();
        let q = a as u64 * h1 + h0;
        if q > q_max {
            return None;
        }
        // p/q reconstructed by rounding; convergents are best approximations.
        let p = (x * q as f64).round();
        if (x - p / q as f64).abs() <= tol {
            return Some(q.max(1));
        }
        let rem = frac - a;
        if rem.abs() < 1e-15 {
            return None;
        }
        frac = 1.0 / rem;
        h0 = h1;
        h1 = q;
    }
    None
}

/// Sampled scalar function on a uniform grid with linear interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl SolutionGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.n + 1 {
            return Err(Error::Grid(format!(
                "expected {} values, got {}",
                spec.n + 1,
                values.len()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Linear interpolation; exact at nodes. `t` must lie in `[t0, t1]`.
    pub fn value(&self, t: f64) -> Result<f64> {
        let (t0, t1) = (self.spec.t0, self.spec.t1);
        if !(t0..=t1).contains(&t) {
            return Err(Error::Domain { t, lo: t0, hi: t1 });
        }
        let h = self.spec.h();
        let i = (((t - t0) / h) as usize).min(self.spec.n - 1);
        let w = ((t - self.spec.node(i)) / h).clamp(0.0, 1.0);
        Ok(self.values[i] * (1.0 - w) + self.values[i + 1] * w)
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Largest node-wise absolute difference against another grid on the
    /// same spec.
    pub fn max_abs_diff(&self, other: &SolutionGrid) -> f64 {
        assert_eq!(self.spec, other.spec, "grids must share one spec");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{MarketModel, PiecewiseConstantFn};

    #[test]
    fn interpolation_is_exact_at_nodes_and_linear_between() {
        let spec = GridSpec::new(0.0, 1.0, 4).unwrap();
        let grid = SolutionGrid::new(spec, vec![0.0, 1.0, 4.0, 9.0, 16.0]).unwrap();
        assert_eq!(grid.value(0.5).unwrap(), 4.0);
        assert_eq!(grid.value(0.375).unwrap(), 2.5);
        assert_eq!(grid.value(1.0).unwrap(), 16.0);
        assert!(matches!(grid.value(1.1), Err(Error::Domain { .. })));
    }

    #[test]
    fn aligned_grid_hits_breakpoints() {
        let model = MarketModel {
            horizon: 1.0,
            riskfree: PiecewiseConstantFn::new(vec![0.0, 0.3, 1.0], vec![0.05, 0.06]).unwrap(),
            drift: PiecewiseConstantFn::constant(0.12, 1.0).unwrap(),
            sigma: PiecewiseConstantFn::constant(0.2, 1.0).unwrap(),
            jumps: vec![],
        };
        let spec = GridSpec::aligned_to_model(&model, 1000).unwrap();
        assert!(spec.n >= 1000);
        // 0.3 must be (numerically) a node
        let h = spec.h();
        let k = (0.3 / h).round();
        assert!((k * h - 0.3).abs() < 1e-12, "n={} misses 0.3", spec.n);
    }

    #[test]
    fn aligned_grid_without_breakpoints_uses_requested_n() {
        let model = MarketModel::constant(2.0, 0.06, 0.12, 0.2, &[]).unwrap();
        let spec = GridSpec::aligned_to_model(&model, 500).unwrap();
        assert_eq!(spec.n, 500);
        assert_eq!(spec.t1, 2.0);
    }
}
