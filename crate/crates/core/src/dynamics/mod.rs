//! Exact numerical engine for N independent two-level emitters.
//!
//! Each emitter carries a Hamiltonian ω σ⁺σ⁻ and three dissipators: radiative
//! decay (σ⁻, rate γ), incoherent pumping (σ⁺, rate γ_p) and pure dephasing
//! (σ⁺σ⁻, rate γ_d). The product-space generator is the sum of the local
//! Lindbladians and is applied matrix-free to the density matrix. Two-time
//! correlations follow from the quantum regression theorem.

mod density;
mod generator;
pub mod integrate;
mod qrt;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::energy_to_detuning;

pub use density::DensityOperator;
pub use generator::{build_generator, Generator};
pub use qrt::{
    cross_correlation_oracle, evolve, g2_oracle, pulsed_cross_correlation_oracle,
    CollectiveOperator, PulsedCorrelation,
};

/// Largest supported ensemble; the vectorized state has 4^N entries.
pub const MAX_EMITTERS: usize = 8;

/// Rates of a single emitter. Frequencies are angular offsets in rad/ns from a
/// common rotating frame, rates are in ns⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterParams {
    pub omega: f64,
    pub gamma: f64,
    pub gamma_p: f64,
    pub gamma_d: f64,
}

impl EmitterParams {
    pub fn new(omega: f64, gamma: f64, gamma_p: f64, gamma_d: f64) -> Result<Self> {
        let e = Self {
            omega,
            gamma,
            gamma_p,
            gamma_d,
        };
        e.validate()?;
        Ok(e)
    }

    /// Same as [`EmitterParams::new`] with the transition offset given in μeV.
    pub fn from_energy(energy_uev: f64, gamma: f64, gamma_p: f64, gamma_d: f64) -> Result<Self> {
        Self::new(energy_to_detuning(energy_uev), gamma, gamma_p, gamma_d)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.omega.is_finite() {
            return Err(Error::InvalidParameter("omega must be finite".into()));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "decay rate must be > 0, got {}",
                self.gamma
            )));
        }
        if !(self.gamma_p >= 0.0) || !self.gamma_p.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "pump rate must be >= 0, got {}",
                self.gamma_p
            )));
        }
        if !(self.gamma_d >= 0.0) || !self.gamma_d.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "dephasing rate must be >= 0, got {}",
                self.gamma_d
            )));
        }
        Ok(())
    }

    /// Population relaxation rate γ + γ_p.
    pub fn rate_sum(&self) -> f64 {
        self.gamma + self.gamma_p
    }

    /// Decay rate of the σ⁻ coherence, (γ + γ_p + γ_d)/2.
    pub fn coherence_decay(&self) -> f64 {
        0.5 * (self.gamma + self.gamma_p + self.gamma_d)
    }
}

/// Steady-state populations of one emitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupations {
    pub excited: f64,
    pub ground: f64,
}

pub fn steady_state(emitter: &EmitterParams) -> Occupations {
    let total = emitter.gamma + emitter.gamma_p;
    Occupations {
        excited: emitter.gamma_p / total,
        ground: emitter.gamma / total,
    }
}

/// Emitters together with the complex amplitudes w_k with which each one
/// feeds the detected mode, σ_C⁺ = Σ_k w_k σ_k⁺.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub emitters: Vec<EmitterParams>,
    pub weights: Vec<C64>,
    /// Gaussian detector response FWHM in ns; 0 disables convolution.
    pub irf_fwhm: f64,
}

impl EnsembleConfig {
    pub fn new(emitters: Vec<EmitterParams>, weights: Vec<C64>, irf_fwhm: f64) -> Result<Self> {
        if emitters.is_empty() {
            return Err(Error::InvalidParameter("ensemble has no emitters".into()));
        }
        if emitters.len() > MAX_EMITTERS {
            return Err(Error::TooManyEmitters(emitters.len()));
        }
        for e in &emitters {
            e.validate()?;
        }
        if weights.len() != emitters.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} emitters",
                weights.len(),
                emitters.len()
            )));
        }
        if weights.iter().all(|w| w.norm() == 0.0) {
            return Err(Error::AllZeroWeights);
        }
        if !(irf_fwhm >= 0.0) || !irf_fwhm.is_finite() {
            return Err(Error::InvalidParameter("irf_fwhm must be >= 0".into()));
        }
        Ok(Self {
            emitters,
            weights,
            irf_fwhm,
        })
    }

    /// Real weights with |w_k|² = I₀/(N n_k^e) and I₀ = 1, so that every
    /// emitter contributes the same detected intensity.
    pub fn equal_brightness(emitters: Vec<EmitterParams>, irf_fwhm: f64) -> Result<Self> {
        let n = emitters.len() as f64;
        let mut weights = Vec::with_capacity(emitters.len());
        for e in &emitters {
            e.validate()?;
            let ne = steady_state(e).excited;
            if ne <= 0.0 {
                return Err(Error::ZeroIntensity(
                    "an emitter without pumping has no steady-state population".into(),
                ));
            }
            weights.push(C64::new((1.0 / (n * ne)).sqrt(), 0.0));
        }
        Self::new(emitters, weights, irf_fwhm)
    }

    pub fn len(&self) -> usize {
        self.emitters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.emitters.is_empty()
    }

    /// Steady-state detected intensity ⟨σ_C⁺σ_C⁻⟩ = Σ_k |w_k|² n_k^e.
    pub fn intensity(&self) -> f64 {
        self.emitters
            .iter()
            .zip(&self.weights)
            .map(|(e, w)| w.norm_sqr() * steady_state(e).excited)
            .sum()
    }

    /// Copy with frequencies shifted so that their mean is zero. Only
    /// differences are physical.
    pub fn recentered(&self) -> Self {
        let mut out = self.clone();
        let mean = out.emitters.iter().map(|e| e.omega).sum::<f64>() / out.len() as f64;
        for e in &mut out.emitters {
            e.omega -= mean;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steady_state_examples() {
        let s = steady_state(&EmitterParams::new(0.0, 1.0, 0.0, 0.0).unwrap());
        assert_eq!((s.excited, s.ground), (0.0, 1.0));
        let s = steady_state(&EmitterParams::new(0.0, 1.0, 1.0, 0.0).unwrap());
        assert_eq!((s.excited, s.ground), (0.5, 0.5));
        let s = steady_state(&EmitterParams::new(0.0, 2.0, 0.5, 0.0).unwrap());
        assert!((s.excited - 0.2).abs() < 1e-15 && (s.ground - 0.8).abs() < 1e-15);
    }

    #[test]
    fn steady_state_matches_rate_equation() {
        // Oracle: integrate dn_e/dt = -γ n_e + γ_p (1 - n_e) with RK4 to t = 100/γ.
        let (gamma, pump) = (2.0, 0.5);
        let mut ne = 0.0_f64;
        let h = 1e-3;
        let f = |n: f64| -gamma * n + pump * (1.0 - n);
        for _ in 0..((100.0 / gamma) / h) as usize {
            let k1 = f(ne);
            let k2 = f(ne + 0.5 * h * k1);
            let k3 = f(ne + 0.5 * h * k2);
            let k4 = f(ne + h * k3);
            ne += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let s = steady_state(&EmitterParams::new(0.0, gamma, pump, 0.0).unwrap());
        assert!((s.excited - ne).abs() < 1e-12);
        assert!((s.excited + s.ground - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_rates() {
        assert!(EmitterParams::new(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(EmitterParams::new(0.0, 1.0, -1.0, 0.0).is_err());
        assert!(EmitterParams::new(f64::NAN, 1.0, 1.0, 0.0).is_err());
        assert!(EmitterParams::new(0.0, 1.0, 0.0, -0.1).is_err());
    }

    #[test]
    fn equal_brightness_normalizes_intensity() {
        let em = vec![
            EmitterParams::new(0.0, 1.0, 0.3, 0.0).unwrap(),
            EmitterParams::new(0.0, 2.0, 1.7, 0.0).unwrap(),
            EmitterParams::new(0.0, 0.4, 2.5, 0.0).unwrap(),
        ];
        let ens = EnsembleConfig::equal_brightness(em, 0.0).unwrap();
        assert!((ens.intensity() - 1.0).abs() < 1e-14);
        for (e, w) in ens.emitters.iter().zip(&ens.weights) {
            let contribution = w.norm_sqr() * steady_state(e).excited;
            assert!((contribution - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn ensemble_guards() {
        let e = EmitterParams::new(0.0, 1.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            EnsembleConfig::equal_brightness(vec![e; 9], 0.0),
            Err(Error::TooManyEmitters(9))
        ));
        assert!(EnsembleConfig::new(vec![e; 2], vec![C64::new(0.0, 0.0); 2], 0.0).is_err());
        assert!(EnsembleConfig::new(vec![e; 2], vec![C64::new(1.0, 0.0); 3], 0.0).is_err());
        let unpumped = EmitterParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
        assert!(EnsembleConfig::equal_brightness(vec![unpumped], 0.0).is_err());
    }
}
