//! Pulsed two-emitter Hong–Ou–Mandel coincidences behind a 2×2 mode
//! transformation b_i = Σ_j T_ij a_j.

use serde::{Deserialize, Serialize};

use crate::dynamics::{pulsed_cross_correlation_oracle, EmitterParams};
use crate::error::{Error, Result};
use crate::trace::{check_increasing, CorrelationTrace};
use crate::units::energy_to_detuning;
use crate::C64;

/// Field transfer matrix from the two emitter modes (columns) to the two
/// detector ports (rows).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub m: [[C64; 2]; 2],
}

impl TransferMatrix {
    pub fn new(m: [[C64; 2]; 2]) -> Self {
        Self { m }
    }

    /// b₁ = (a₁ + a₂)/√2, b₂ = (a₁ − a₂)/√2.
    pub fn ideal() -> Self {
        let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { m: [[s, s], [s, -s]] }
    }

    /// Mean power transmitted per input mode.
    pub fn transmission(&self) -> f64 {
        self.m.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>() / 2.0
    }

    /// ‖M†M − ηI‖_F / η with η the mean transmission.
    pub fn unitarity_deviation(&self) -> f64 {
        let eta = self.transmission();
        let mut sum = 0.0;
        for j in 0..2 {
            for k in 0..2 {
                let mut g: C64 = (0..2).map(|i| self.m[i][j].conj() * self.m[i][k]).sum();
                if j == k {
                    g -= eta;
                }
                sum += g.norm_sqr();
            }
        }
        sum.sqrt() / eta
    }

    /// Fraction of each input's transmitted power reaching each port:
    /// |M_ij|² / Σ_i |M_ij|².
    pub fn splitting(&self) -> [[f64; 2]; 2] {
        let mut out = [[0.0; 2]; 2];
        for j in 0..2 {
            let total = self.m[0][j].norm_sqr() + self.m[1][j].norm_sqr();
            for i in 0..2 {
                out[i][j] = self.m[i][j].norm_sqr() / total;
            }
        }
        out
    }
}

/// Two emitters excited together by every pulse.
///
/// The pure-dephasing rates follow the Lindblad convention used throughout:
/// an emitter's first-order coherence decays at (γ + γ_d)/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomPairParams {
    /// Frequencies are taken from `detuning_uev`, not from the emitters.
    pub emitters: [EmitterParams; 2],
    /// ħ(ω₂ − ω₁), μeV.
    pub detuning_uev: f64,
    /// Pulse repetition period, ns.
    pub period: f64,
    pub transfer: TransferMatrix,
}

/// Largest unitarity deviation accepted without a warning.
pub const UNITARITY_WARNING: f64 = 0.05;

impl HomPairParams {
    pub fn new(emitters: [EmitterParams; 2], detuning_uev: f64, period: f64, transfer: TransferMatrix) -> Result<Self> {
        let p = Self {
            emitters,
            detuning_uev,
            period,
            transfer,
        };
        p.validate()?;
        Ok(p)
    }

    /// Ideal splitter, 12.5 ns period.
    pub fn ideal(e1: EmitterParams, e2: EmitterParams, detuning_uev: f64) -> Result<Self> {
        Self::new([e1, e2], detuning_uev, 12.5, TransferMatrix::ideal())
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.emitters {
            e.validate()?;
            if e.gamma_p != 0.0 {
                return Err(Error::ModelAssumption(
                    "pulsed preparation: incoherent pumping must be zero".into(),
                ));
            }
        }
        if !self.detuning_uev.is_finite() {
            return Err(Error::InvalidParameter("detuning must be finite".into()));
        }
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(Error::InvalidParameter("period must be finite and > 0".into()));
        }
        let t = &self.transfer.m;
        if t.iter().flatten().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidParameter("transfer matrix must be finite".into()));
        }
        if self.side_area() <= 0.0 {
            return Err(Error::ZeroIntensity("a port receives no light".into()));
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let d = self.transfer.unitarity_deviation();
        if d > UNITARITY_WARNING {
            vec![format!("transfer matrix unitarity deviation {d:.3} exceeds {UNITARITY_WARNING}")]
        } else {
            Vec::new()
        }
    }

    /// Δ = ω₂ − ω₁, rad/ns.
    pub fn detuning(&self) -> f64 {
        energy_to_detuning(self.detuning_uev)
    }

    /// The emitters with frequencies ∓Δ/2.
    pub fn placed_emitters(&self) -> [EmitterParams; 2] {
        let w = self.detuning() / 2.0;
        let [mut a, mut b] = self.emitters;
        a.omega = -w;
        b.omega = w;
        [a, b]
    }

    /// Sum of the two coherence decay rates.
    fn coherence_rate(&self) -> f64 {
        let [a, b] = self.emitters;
        (a.gamma + b.gamma + a.gamma_d + b.gamma_d) / 2.0
    }

    /// |T₁₁T₂₂|², |T₁₂T₂₁|² and conj(T₁₁T₂₂)·T₁₂T₂₁.
    fn amplitudes(&self) -> (f64, f64, C64) {
        let t = &self.transfer.m;
        let direct = t[0][0] * t[1][1];
        let crossed = t[0][1] * t[1][0];
        (direct.norm_sqr(), crossed.norm_sqr(), direct.conj() * crossed)
    }

    /// Coincidences between photons from different pulses:
    /// (Σ_k |T₁k|²)(Σ_k |T₂k|²).
    fn side_area(&self) -> f64 {
        let t = &self.transfer.m;
        (t[0][0].norm_sqr() + t[0][1].norm_sqr()) * (t[1][0].norm_sqr() + t[1][1].norm_sqr())
    }

    /// Same-pulse coincidence density; port 2 clicks τ after port 1.
    fn central(&self, tau: f64) -> f64 {
        let [a, b] = self.emitters;
        let (g1, g2) = (a.gamma, b.gamma);
        let (direct, crossed, c) = self.amplitudes();
        let s = tau.abs();
        // photon 1 at port 1 first: emitter 2 is still decaying, and vice versa
        let (rd, rc) = if tau >= 0.0 { (g2, g1) } else { (g1, g2) };
        let interference = 2.0 * (c * C64::from_polar(1.0, self.detuning() * tau)).re * (-self.coherence_rate() * s).exp();
        g1 * g2 / (g1 + g2) * (direct * (-rd * s).exp() + crossed * (-rc * s).exp() + interference)
    }

    /// Density between photons of pulses `τ` apart on average, centred at 0.
    fn side(&self, tau: f64) -> f64 {
        let t = &self.transfer.m;
        let [a, b] = self.emitters;
        let rates = [a.gamma, b.gamma];
        let mut sum = 0.0;
        for k in 0..2 {
            for j in 0..2 {
                let (gk, gj) = (rates[k], rates[j]);
                let decay = if tau >= 0.0 { gj } else { gk };
                sum += t[0][k].norm_sqr() * t[1][j].norm_sqr() * gk * gj / (gk + gj) * (-decay * tau.abs()).exp();
            }
        }
        sum
    }
}

/// Coincidence density p(τ) per pulse pair: the same-pulse peak at 0 plus
/// uncorrelated side peaks at multiples of the period.
pub fn hom_coincidence_density(pair: &HomPairParams, tau: &[f64]) -> Result<CorrelationTrace> {
    pair.validate()?;
    check_increasing(tau)?;
    let span = tau.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    for (a, b) in tau.iter().zip(tau.iter().rev()) {
        if (a + b).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::InvalidParameter("HOM density needs a τ grid symmetric about 0".into()));
        }
    }
    let reach = (span / pair.period).ceil() as i64 + 1;
    let mut density = Vec::with_capacity(tau.len());
    for &t in tau {
        let mut p = pair.central(t);
        for n in (-reach..=reach).filter(|n| *n != 0) {
            p += pair.side(t - n as f64 * pair.period);
        }
        if p < -1e-12 {
            return Err(Error::ModelAssumption(format!("negative coincidence density {p} at τ = {t}")));
        }
        density.push(p.max(0.0));
    }
    CorrelationTrace::new(tau.to_vec(), density, None)
}

/// Central-peak area over the side-peak area.
pub fn hom_g2_zero(pair: &HomPairParams) -> f64 {
    let [a, b] = pair.emitters;
    let (g1, g2) = (a.gamma, b.gamma);
    let (direct, crossed, c) = pair.amplitudes();
    let gamma = pair.coherence_rate();
    let delta = pair.detuning();
    let interference = 2.0 * c.re * g1 * g2 / (g1 + g2) * 2.0 * gamma / (gamma * gamma + delta * delta);
    (direct + crossed + interference) / pair.side_area()
}

/// g²(0) with the interference term removed (fully distinguishable photons).
pub fn hom_g2_zero_distinguishable(pair: &HomPairParams) -> f64 {
    let (direct, crossed, _) = pair.amplitudes();
    (direct + crossed) / pair.side_area()
}

/// V₀ = 1 − g²_ind(0)/g²_dis(0).
pub fn hom_visibility(g2_ind: f64, g2_dis: f64) -> Result<f64> {
    if g2_dis == 0.0 {
        return Err(Error::DivisionByZero("distinguishable g2(0) is zero".into()));
    }
    if !(g2_dis > 0.0) || !g2_ind.is_finite() {
        return Err(Error::InvalidParameter("g2 values must be finite with g2_dis > 0".into()));
    }
    Ok(1.0 - g2_ind / g2_dis)
}

pub fn pair_visibility(pair: &HomPairParams) -> Result<f64> {
    hom_visibility(hom_g2_zero(pair), hom_g2_zero_distinguishable(pair))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomResult {
    pub density: CorrelationTrace,
    pub g2_zero: f64,
    pub g2_distinguishable: f64,
    pub visibility: f64,
    pub warnings: Vec<String>,
}

pub fn hom_result(pair: &HomPairParams, tau: &[f64]) -> Result<HomResult> {
    let density = hom_coincidence_density(pair, tau)?;
    let g2_zero = hom_g2_zero(pair);
    let g2_distinguishable = hom_g2_zero_distinguishable(pair);
    Ok(HomResult {
        density,
        g2_zero,
        g2_distinguishable,
        visibility: hom_visibility(g2_zero, g2_distinguishable)?,
        warnings: pair.warnings(),
    })
}

/// Common pure-dephasing rate (applied to both emitters) at which the pair
/// reaches visibility `target`. V₀ falls strictly with γ_d, so the root is
/// unique; it is found by bisection.
pub fn dephasing_for_visibility(pair: &HomPairParams, target: f64) -> Result<f64> {
    let at = |gamma_d: f64| -> Result<f64> {
        let mut p = *pair;
        for e in &mut p.emitters {
            e.gamma_d = gamma_d;
        }
        pair_visibility(&p)
    };
    let best = at(0.0)?;
    if !(target > 0.0 && target < best) {
        return Err(Error::InvalidParameter(format!(
            "visibility {target} is not reachable; the range is (0, {best})"
        )));
    }
    let scale = pair.emitters[0].gamma.max(pair.emitters[1].gamma);
    let (mut lo, mut hi) = (0.0, scale);
    while at(hi)? > target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 * scale {
            return Err(Error::NoConvergence("visibility bracket diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Port weights of the collective operators for the brute-force engine:
/// b_i = Σ_k T_ik √γ_k σ_k⁻.
pub fn port_weights(pair: &HomPairParams) -> [Vec<C64>; 2] {
    let rates = [pair.emitters[0].gamma, pair.emitters[1].gamma];
    let port = |i: usize| -> Vec<C64> {
        (0..2)
            .map(|k| pair.transfer.m[i][k].conj() * rates[k].sqrt())
            .collect()
    };
    [port(0), port(1)]
}

/// g²(0) of the pair from the master-equation engine.
pub fn hom_g2_zero_oracle(pair: &HomPairParams) -> Result<f64> {
    pair.validate()?;
    let emitters = pair.placed_emitters();
    let slowest = emitters[0].gamma.min(emitters[1].gamma);
    let [w1, w2] = port_weights(pair);
    let r = pulsed_cross_correlation_oracle(&emitters, &w1, &w2, &[0.0], 40.0 / slowest)?;
    Ok(r.normalized_area())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::uniform_grid;
    use proptest::prelude::*;

    fn emitter(gamma: f64, gamma_d: f64) -> EmitterParams {
        EmitterParams::new(0.0, gamma, 0.0, gamma_d).unwrap()
    }

    #[test]
    fn perfect_interference_has_no_coincidences() {
        // long period: side-peak tails vanish inside the window
        let pair = HomPairParams::new([emitter(1.0, 0.0); 2], 0.0, 1e3, TransferMatrix::ideal()).unwrap();
        assert!(hom_g2_zero(&pair).abs() < 1e-12);
        let tau = uniform_grid(-5.0, 5.0, 0.01).unwrap();
        let d = hom_coincidence_density(&pair, &tau).unwrap();
        assert!(d.g2.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn distinguishable_limit() {
        for pair in [
            HomPairParams::ideal(emitter(1.0, 0.0), emitter(1.0, 0.0), 1e6).unwrap(),
            HomPairParams::ideal(emitter(1.0, 1e8), emitter(1.0, 1e8), 0.0).unwrap(),
        ] {
            assert!((hom_g2_zero(&pair) - 0.5).abs() < 1e-5);
        }
        let pair = HomPairParams::ideal(emitter(1.0, 0.4), emitter(1.3, 0.2), 3.0).unwrap();
        assert_eq!(hom_g2_zero_distinguishable(&pair), 0.5);
    }

    #[test]
    fn visibility_identity() {
        assert!((hom_visibility(0.13, 0.50).unwrap() - 0.74).abs() < 1e-12);
        assert_eq!(hom_visibility(0.0, 0.3).unwrap(), 1.0);
        assert_eq!(hom_visibility(0.3, 0.3).unwrap(), 0.0);
        assert!(matches!(hom_visibility(0.1, 0.0), Err(Error::DivisionByZero(_))));
    }

    #[test]
    fn dephasing_inverts_visibility() {
        let pair = HomPairParams::ideal(emitter(1.0, 0.0), emitter(1.0, 0.0), 0.0).unwrap();
        let gd = dephasing_for_visibility(&pair, 0.737).unwrap();
        // equal emitters: V₀ = γ/(γ + γ_d)
        assert!((gd - (1.0 / 0.737 - 1.0)).abs() < 1e-10);
        assert!(dephasing_for_visibility(&pair, 1.2).is_err());
    }

    #[test]
    fn density_integrates_to_the_area() {
        let pair = HomPairParams::new(
            [emitter(1.0, 0.3), emitter(1.4, 0.1)],
            2.0,
            1e6,
            TransferMatrix::new([
                [C64::new(0.8, 0.1), C64::new(0.5, -0.2)],
                [C64::new(0.3, 0.4), C64::new(-0.7, 0.0)],
            ]),
        )
        .unwrap();
        let tau = uniform_grid(-60.0, 60.0, 0.0005).unwrap();
        let d = hom_coincidence_density(&pair, &tau).unwrap();
        let h = 0.0005;
        let area: f64 = d.g2.iter().sum::<f64>() * h;
        assert!((area / pair.side_area() - hom_g2_zero(&pair)).abs() < 1e-5);
    }

    #[test]
    fn side_peaks_have_unit_normalized_area() {
        let pair = HomPairParams::new([emitter(1.0, 0.3), emitter(1.4, 0.1)], 2.0, 25.0, TransferMatrix::ideal()).unwrap();
        let tau = uniform_grid(-40.0, 40.0, 0.001).unwrap();
        let d = hom_coincidence_density(&pair, &tau).unwrap();
        let area: f64 = d
            .tau
            .iter()
            .zip(&d.g2)
            .filter(|(t, _)| (**t - 25.0).abs() < 12.5)
            .map(|(_, v)| v * 0.001)
            .sum();
        assert!((area / pair.side_area() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn asymmetric_grid_is_rejected() {
        let pair = HomPairParams::ideal(emitter(1.0, 0.0), emitter(1.0, 0.0), 0.0).unwrap();
        assert!(hom_coincidence_density(&pair, &[-1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn pumping_is_rejected() {
        let e = EmitterParams::new(0.0, 1.0, 0.1, 0.0).unwrap();
        assert!(matches!(
            HomPairParams::ideal(e, e, 0.0),
            Err(Error::ModelAssumption(_))
        ));
    }

    #[test]
    fn matches_master_equation() {
        let cases = [
            HomPairParams::ideal(emitter(1.0, 1.0), emitter(1.0, 1.0), 0.0).unwrap(),
            HomPairParams::new(
                [emitter(0.9, 0.2), emitter(1.5, 0.6)],
                1.2,
                12.5,
                TransferMatrix::new([
                    [C64::new(0.6, 0.2), C64::new(0.5, -0.4)],
                    [C64::new(0.3, 0.5), C64::new(-0.7, 0.1)],
                ]),
            )
            .unwrap(),
        ];
        for pair in cases {
            let oracle = hom_g2_zero_oracle(&pair).unwrap();
            assert!((oracle - hom_g2_zero(&pair)).abs() < 1e-6, "{oracle} {}", hom_g2_zero(&pair));
            // the density too
            let tau = [-2.0, -0.7, 0.0, 0.3, 1.9];
            let [w1, w2] = port_weights(&pair);
            let r = pulsed_cross_correlation_oracle(&pair.placed_emitters(), &w1, &w2, &tau, 60.0).unwrap();
            for (t, v) in tau.iter().zip(&r.density) {
                assert!((pair.central(*t) - v).abs() < 1e-7, "τ = {t}: {} vs {v}", pair.central(*t));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        // dephasing only lowers V₀ while |Δ| ≤ Γ; a detuned pair gains from
        // the broader line
        fn visibility_falls_with_dephasing_and_detuning(
            gamma in 0.3f64..3.0,
            gd in 0.0f64..5.0,
            extra in 0.01f64..2.0,
            delta in 0.0f64..20.0,
        ) {
            let v = |gd: f64, delta: f64| {
                pair_visibility(&HomPairParams::ideal(emitter(gamma, gd), emitter(gamma, gd), delta).unwrap()).unwrap()
            };
            prop_assert!(v(gd + extra, 0.0) < v(gd, 0.0));
            prop_assert!(v(gd, delta + extra) < v(gd, delta));
        }

        #[test]
        fn swapping_emitters_mirrors_the_density(
            g1 in 0.3f64..3.0, g2 in 0.3f64..3.0, d1 in 0.0f64..2.0, d2 in 0.0f64..2.0, delta in -10.0f64..10.0,
        ) {
            let a = HomPairParams::ideal(emitter(g1, d1), emitter(g2, d2), delta).unwrap();
            let b = HomPairParams::ideal(emitter(g2, d2), emitter(g1, d1), -delta).unwrap();
            let tau = uniform_grid(-3.0, 3.0, 0.25).unwrap();
            let pa = hom_coincidence_density(&a, &tau).unwrap();
            let pb = hom_coincidence_density(&b, &tau).unwrap();
            for (x, y) in pa.g2.iter().zip(&pb.g2) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
