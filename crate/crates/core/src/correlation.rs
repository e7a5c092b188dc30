//! Closed-form common-mode g²(τ) of N equally bright independent emitters,
//! Gaussian detector response and reference values.
//!
//! g²(τ) = 1 − (G_inc(τ) − Re G_coh(τ)) / N² with
//! G_inc = Σ_k e^{−(γ_k+γ_k^p)|τ|} and
//! G_coh = Σ_{k≠j} e^{−(iΔ_kj + Γ_kj)|τ|}.

use num_complex::Complex64 as C64;

use crate::dynamics::EmitterParams;
use crate::error::{Error, Result};
use crate::trace::{uniform_spacing, CorrelationTrace};
use crate::units::fwhm_to_sigma;

pub use crate::units::energy_to_detuning;

/// Rates entering the analytic model.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticG2Params {
    /// γ_k + γ_k^p per emitter.
    pub rate_sums: Vec<f64>,
    /// Γ_kj, row-major N×N, symmetric.
    pub decoherence: Vec<f64>,
    /// Δ_kj = ω_k − ω_j, row-major N×N, antisymmetric.
    pub detuning: Vec<f64>,
}

impl AnalyticG2Params {
    pub fn from_emitters(emitters: &[EmitterParams]) -> Result<Self> {
        if emitters.is_empty() {
            return Err(Error::InvalidParameter("no emitters".into()));
        }
        for e in emitters {
            e.validate()?;
        }
        let n = emitters.len();
        let mut decoherence = vec![0.0; n * n];
        let mut detuning = vec![0.0; n * n];
        for (k, a) in emitters.iter().enumerate() {
            for (j, b) in emitters.iter().enumerate() {
                decoherence[k * n + j] = a.coherence_decay() + b.coherence_decay();
                detuning[k * n + j] = a.omega - b.omega;
            }
        }
        Ok(Self {
            rate_sums: emitters.iter().map(EmitterParams::rate_sum).collect(),
            decoherence,
            detuning,
        })
    }

    /// Builds the parameters from rate sums, dephasing rates and frequencies.
    pub fn from_parts(rate_sums: &[f64], gamma_d: &[f64], omega: &[f64]) -> Result<Self> {
        let n = rate_sums.len();
        if n == 0 || gamma_d.len() != n || omega.len() != n {
            return Err(Error::InvalidParameter(
                "rate sums, dephasing rates and frequencies must have equal nonzero length".into(),
            ));
        }
        if rate_sums.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter("rate sums must be positive".into()));
        }
        if gamma_d.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::InvalidParameter("dephasing rates must be >= 0".into()));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("frequencies must be finite".into()));
        }
        let mut decoherence = vec![0.0; n * n];
        let mut detuning = vec![0.0; n * n];
        for k in 0..n {
            for j in 0..n {
                decoherence[k * n + j] = 0.5 * (rate_sums[k] + rate_sums[j] + gamma_d[k] + gamma_d[j]);
                detuning[k * n + j] = omega[k] - omega[j];
            }
        }
        Ok(Self {
            rate_sums: rate_sums.to_vec(),
            decoherence,
            detuning,
        })
    }

    pub fn n(&self) -> usize {
        self.rate_sums.len()
    }

    fn g_inc(&self, tau: f64) -> f64 {
        self.rate_sums.iter().map(|s| (-s * tau).exp()).sum()
    }

    fn g_coh(&self, tau: f64) -> C64 {
        let n = self.n();
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..n {
            for j in (0..n).filter(|j| *j != k) {
                let i = k * n + j;
                acc += (C64::new(-self.decoherence[i], -self.detuning[i]) * tau).exp();
            }
        }
        acc
    }

    /// g²(τ) at a single delay; negative τ by even extension.
    pub fn value(&self, tau: f64) -> f64 {
        let t = tau.abs();
        let n2 = (self.n() * self.n()) as f64;
        1.0 - (self.g_inc(t) - self.g_coh(t).re) / n2
    }

    /// The model without inter-emitter coherence, 1 − G_inc(τ)/N².
    pub fn incoherent_value(&self, tau: f64) -> f64 {
        let n2 = (self.n() * self.n()) as f64;
        1.0 - self.g_inc(tau.abs()) / n2
    }
}

/// Evaluates the analytic g² on `tau`.
pub fn g2_analytic(params: &AnalyticG2Params, tau: &[f64]) -> Result<CorrelationTrace> {
    let g2 = tau.iter().map(|t| params.value(*t).max(0.0)).collect();
    CorrelationTrace::new(tau.to_vec(), g2, None)
}

/// Analytic g² with the coherent pair terms dropped.
pub fn g2_incoherent(params: &AnalyticG2Params, tau: &[f64]) -> Result<CorrelationTrace> {
    let g2 = tau.iter().map(|t| params.incoherent_value(*t)).collect();
    CorrelationTrace::new(tau.to_vec(), g2, None)
}

/// g²(0) of N fully distinguishable, equally bright emitters, 1 − 1/N.
pub fn distinguishable_baseline(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (n - 1) as f64 / n as f64
}

/// g²(0) of N identical, equally bright emitters without dephasing, 2 − 2/N.
pub fn ideal_bunching_peak(n: usize) -> f64 {
    2.0 * distinguishable_baseline(n)
}

/// Discrete Gaussian kernel sampled at a fixed grid spacing, truncated at
/// ±5σ and normalized to unit sum.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    taps: Vec<f64>,
    half: usize,
}

impl GaussianKernel {
    pub fn new(fwhm: f64, spacing: f64) -> Result<Self> {
        if !(fwhm > 0.0) || !fwhm.is_finite() {
            return Err(Error::InvalidParameter(format!("fwhm must be > 0, got {fwhm}")));
        }
        if !(spacing > 0.0) {
            return Err(Error::InvalidParameter("grid spacing must be > 0".into()));
        }
        let limit = fwhm / 10.0;
        if spacing > limit * (1.0 + 1e-9) {
            return Err(Error::GridTooCoarse { spacing, limit });
        }
        let sigma = fwhm_to_sigma(fwhm);
        let half = (5.0 * sigma / spacing).floor() as usize;
        let mut taps: Vec<f64> = (0..=2 * half)
            .map(|i| {
                let x = (i as f64 - half as f64) * spacing / sigma;
                (-0.5 * x * x).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        Ok(Self { taps, half })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Convolution with edge replication outside the data.
    pub fn apply(&self, data: &[f64]) -> Vec<f64> {
        let n = data.len() as isize;
        let h = self.half as isize;
        (0..n)
            .map(|i| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(m, w)| w * data[(i + m as isize - h).clamp(0, n - 1) as usize])
                    .sum()
            })
            .collect()
    }

    /// Standard errors of the smoothed values for independent inputs.
    pub fn apply_sigma(&self, sigma: &[f64]) -> Vec<f64> {
        let n = sigma.len() as isize;
        let h = self.half as isize;
        (0..n)
            .map(|i| {
                self.taps
                    .iter()
                    .enumerate()
                    .map(|(m, w)| {
                        let s = sigma[(i + m as isize - h).clamp(0, n - 1) as usize];
                        w * w * s * s
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

/// Convolves a trace on a uniform grid with a Gaussian response of the given
/// FWHM. A zero width returns the input.
pub fn convolve_irf(trace: &CorrelationTrace, fwhm: f64) -> Result<CorrelationTrace> {
    if fwhm == 0.0 {
        return Ok(trace.clone());
    }
    if !(fwhm > 0.0) {
        return Err(Error::InvalidParameter(format!("fwhm must be >= 0, got {fwhm}")));
    }
    let step = uniform_spacing(&trace.tau)?;
    let kernel = GaussianKernel::new(fwhm, step)?;
    CorrelationTrace::new(
        trace.tau.clone(),
        kernel.apply(&trace.g2),
        trace.sigma.as_ref().map(|s| kernel.apply_sigma(s)),
    )
}

/// Analytic model on `tau` followed by detector convolution.
pub fn g2_model(params: &AnalyticG2Params, tau: &[f64], irf_fwhm: f64) -> Result<CorrelationTrace> {
    convolve_irf(&g2_analytic(params, tau)?, irf_fwhm)
}
