//! Closed-form test functions and the sigmoid time-varying transformation.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Convergence of short-run readings toward the long-run value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeVaryingConfig {
    /// Time needed to approach the long-run value (days, or hours on hourly problems).
    pub horizon: f64,
    /// Normalized input dimension controlling the convergence speed.
    pub i: usize,
    /// Normalized input dimension shifting the sigmoid.
    pub j: usize,
}

impl Default for TimeVaryingConfig {
    fn default() -> Self {
        Self {
            horizon: 15.0,
            i: 0,
            j: 1,
        }
    }
}

impl TimeVaryingConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return contract("time-varying horizon must be positive");
        }
        if self.i == self.j || self.i >= dim || self.j >= dim {
            return contract(format!(
                "time-varying dimensions i={} and j={} must differ and be below {dim}",
                self.i, self.j
            ));
        }
        Ok(())
    }
}

/// `g(x, t) = 1 / (1 + exp(-((2t - T)/T + 0.8 x_j) / min(0.05 + 0.5 x_i, 0.5)))`
/// for `x` in the unit cube.
pub fn time_varying_factor(x: &[f64], t: f64, cfg: &TimeVaryingConfig) -> Result<f64> {
    cfg.validate(x.len())?;
    if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return contract("time-varying factor expects normalized inputs in [0, 1]");
    }
    if !(t >= 0.0) {
        return contract("time must be nonnegative");
    }
    let big_t = cfg.horizon;
    let z = ((2.0 * t - big_t) / big_t + 0.8 * x[cfg.j]) / (0.05 + 0.5 * x[cfg.i]).min(0.5);
    Ok(1.0 / (1.0 + (-z).exp()))
}

const HARTMANN_A: [[f64; 3]; 4] = [[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]];
const HARTMANN_P: [[f64; 3]; 4] = [
    [0.3689, 0.1170, 0.2673],
    [0.4699, 0.4387, 0.7470],
    [0.1091, 0.8732, 0.5547],
    [0.0381, 0.5743, 0.8828],
];
const HARTMANN_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];

/// Three-dimensional Hartmann function on `[0, 1]^3` (to be minimized).
pub fn hartmann3(x: &[f64]) -> f64 {
    -(0..4)
        .map(|i| {
            let inner: f64 = (0..3).map(|j| HARTMANN_A[i][j] * (x[j] - HARTMANN_P[i][j]).powi(2)).sum();
            HARTMANN_ALPHA[i] * (-inner).exp()
        })
        .sum::<f64>()
}

pub const ACKLEY_BOUND: f64 = 32.768;

/// Ackley function (a=20, b=0.2, c=2pi), minimum 0 at the origin.
pub fn ackley(x: &[f64]) -> f64 {
    let d = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / d;
    let cs = x.iter().map(|v| (2.0 * std::f64::consts::PI * v).cos()).sum::<f64>() / d;
    -20.0 * (-0.2 * sq.sqrt()).exp() - cs.exp() + 20.0 + std::f64::consts::E
}

pub fn ackley3(x: &[f64]) -> f64 {
    ackley(&x[..3])
}
