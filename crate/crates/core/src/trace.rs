use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking that a grid is uniform.
pub const UNIFORM_RTOL: f64 = 1e-6;

/// Sampled g²(τ) on a strictly increasing delay grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTrace {
    pub tau: Vec<f64>,
    pub g2: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
}

impl CorrelationTrace {
    pub fn new(tau: Vec<f64>, g2: Vec<f64>, sigma: Option<Vec<f64>>) -> Result<Self> {
        if tau.len() != g2.len() {
            return Err(Error::InvalidParameter(format!(
                "tau has {} points but g2 has {}",
                tau.len(),
                g2.len()
            )));
        }
        if let Some(s) = &sigma {
            if s.len() != tau.len() {
                return Err(Error::InvalidParameter("sigma length differs from tau".into()));
            }
            if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidParameter("sigma must be finite and >= 0".into()));
            }
        }
        check_increasing(&tau)?;
        if let Some(i) = g2.iter().position(|v| !v.is_finite() || *v < -1e-9) {
            return Err(Error::InvalidParameter(format!(
                "g2[{i}] = {} is negative or not finite",
                g2[i]
            )));
        }
        Ok(Self { tau, g2, sigma })
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Grid spacing if the grid is uniform within [`UNIFORM_RTOL`].
    pub fn uniform_spacing(&self) -> Result<f64> {
        uniform_spacing(&self.tau)
    }

    /// Value at the grid point closest to `tau`.
    pub fn nearest(&self, tau: f64) -> Option<f64> {
        let i = self
            .tau
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - tau).abs().total_cmp(&(b.1 - tau).abs()))?
            .0;
        Some(self.g2[i])
    }
}

pub(crate) fn check_increasing(tau: &[f64]) -> Result<()> {
    if tau.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidParameter("tau grid contains non-finite values".into()));
    }
    if let Some(w) = tau.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(format!(
            "tau grid is not strictly increasing at index {}",
            w + 1
        )));
    }
    Ok(())
}

pub fn uniform_spacing(tau: &[f64]) -> Result<f64> {
    if tau.len() < 2 {
        return Err(Error::NonUniformGrid("fewer than two points".into()));
    }
    let step = tau[1] - tau[0];
    if step <= 0.0 {
        return Err(Error::NonUniformGrid("grid is not increasing".into()));
    }
    for (i, w) in tau.windows(2).enumerate() {
        if ((w[1] - w[0]) - step).abs() > UNIFORM_RTOL * step {
            return Err(Error::NonUniformGrid(format!(
                "spacing {} at index {} differs from {}",
                w[1] - w[0],
                i,
                step
            )));
        }
    }
    Ok(step)
}

/// Uniform grid `min, min+step, ..., max` built from integer multiples so the
/// points are reproducible and a symmetric range contains an exact zero.
pub fn uniform_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(max > min) || !min.is_finite() || !max.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "invalid grid [{min}, {max}] with step {step}"
        )));
    }
    let lo = (min / step).round() as i64;
    let hi = (max / step).round() as i64;
    Ok((lo..=hi).map(|i| i as f64 * step).collect())
}

/// Default delay grid: [-10, 10] ns at 2.5 ps.
pub fn default_tau_grid() -> Vec<f64> {
    uniform_grid(-10.0, 10.0, 0.0025).expect("static grid")
}
