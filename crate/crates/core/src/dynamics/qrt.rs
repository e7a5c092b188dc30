use num_complex::Complex64 as C64;

use super::integrate::Dopri5;
use super::{build_generator, DensityOperator, EmitterParams, EnsembleConfig, Generator};
use crate::error::{Error, Result};
use crate::trace::{check_increasing, CorrelationTrace};

/// Collective raising operator σ⁺ = Σ_k w_k σ_k⁺.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveOperator {
    weights: Vec<C64>,
}

impl CollectiveOperator {
    pub fn new(weights: Vec<C64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[C64] {
        &self.weights
    }

    /// σ⁻ x σ⁺ for a row-major matrix of dimension `d`.
    pub fn collapse(&self, x: &[C64], d: usize) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); d * d];
        // (σ_k⁻ x σ_j⁺)_{ab} = x_{a|k, b|j} when bit k of a and bit j of b are clear.
        for (k, wk) in self.weights.iter().enumerate() {
            let bk = 1usize << k;
            let left = wk.conj();
            if left.norm_sqr() == 0.0 {
                continue;
            }
            for (j, wj) in self.weights.iter().enumerate() {
                let bj = 1usize << j;
                let c = left * wj;
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                for a in (0..d).filter(|a| a & bk == 0) {
                    let src = (a | bk) * d;
                    let dst = a * d;
                    for b in (0..d).filter(|b| b & bj == 0) {
                        out[dst + b] += c * x[src + (b | bj)];
                    }
                }
            }
        }
        out
    }

    /// Tr(σ⁺σ⁻ x).
    pub fn intensity(&self, x: &[C64], d: usize) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (k, wk) in self.weights.iter().enumerate() {
            let bk = 1usize << k;
            for (j, wj) in self.weights.iter().enumerate() {
                let bj = 1usize << j;
                let c = wk * wj.conj();
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                // Tr(σ_k⁺σ_j⁻ x) = Σ_{a: bit k set, bit j of a^k clear} x_{(a^k)|j, a}
                let mut s = C64::new(0.0, 0.0);
                for a in (0..d).filter(|a| a & bk != 0) {
                    let r = a ^ bk;
                    if r & bj == 0 {
                        s += x[(r | bj) * d + a];
                    }
                }
                acc += c * s;
            }
        }
        acc
    }
}

fn initial_step(g: &Generator) -> f64 {
    0.01 / g.rate_scale().max(1e-3)
}

/// Propagates ρ by e^{Lt}.
pub fn evolve(generator: &Generator, rho0: &DensityOperator, t: f64) -> Result<DensityOperator> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("evolution time must be >= 0, got {t}")));
    }
    if rho0.n_emitters() != generator.n_emitters() {
        return Err(Error::InvalidParameter(
            "state and generator describe different ensembles".into(),
        ));
    }
    let mut y = rho0.data().to_vec();
    let mut stepper = Dopri5::new(y.len(), initial_step(generator));
    let mut f = |x: &[C64], dx: &mut [C64]| generator.apply(x, dx);
    stepper.advance(&mut f, &mut y, 0.0, t)?;
    DensityOperator::from_data(rho0.n_emitters(), y)
}

/// Tr(O e^{Lτ} x0) sampled on a non-negative increasing grid.
fn regression_readout(
    generator: &Generator,
    x0: Vec<C64>,
    readout: &CollectiveOperator,
    tau: &[f64],
) -> Result<Vec<C64>> {
    let d = generator.dim();
    let mut y = x0;
    let mut stepper = Dopri5::new(y.len(), initial_step(generator));
    let mut f = |x: &[C64], dx: &mut [C64]| generator.apply(x, dx);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(tau.len());
    for &target in tau {
        stepper.advance(&mut f, &mut y, t, target)?;
        t = target;
        out.push(readout.intensity(&y, d));
    }
    Ok(out)
}

/// Normalized common-mode g²(τ) by the quantum regression theorem:
/// Tr[σ_C⁺σ_C⁻ e^{Lτ}(σ_C⁻ ρ_ss σ_C⁺)] / I₀².
pub fn g2_oracle(ensemble: &EnsembleConfig, tau: &[f64]) -> Result<CorrelationTrace> {
    check_increasing(tau)?;
    if tau.first().is_some_and(|t| *t < 0.0) {
        return Err(Error::InvalidParameter("g2_oracle needs tau >= 0".into()));
    }
    let generator = build_generator(ensemble)?;
    let d = generator.dim();
    let rho = DensityOperator::product_steady_state(generator.emitters())?;
    let op = CollectiveOperator::new(ensemble.weights.clone());
    let i0 = op.intensity(rho.data(), d).re;
    if !(i0 > 0.0) {
        return Err(Error::ZeroIntensity("the collected mode".into()));
    }
    let x0 = op.collapse(rho.data(), d);
    let raw = regression_readout(&generator, x0, &op, tau)?;
    let g2 = raw.iter().map(|z| z.re / (i0 * i0)).collect();
    CorrelationTrace::new(tau.to_vec(), g2, None)
}

/// Normalized steady-state cross-correlation between two collective modes.
///
/// Positive τ means the photon in mode 2 is detected τ after the photon in
/// mode 1; negative τ swaps the roles.
pub fn cross_correlation_oracle(
    ensemble: &EnsembleConfig,
    weights_b1: &[C64],
    weights_b2: &[C64],
    tau: &[f64],
) -> Result<CorrelationTrace> {
    check_increasing(tau)?;
    let n = ensemble.len();
    if weights_b1.len() != n || weights_b2.len() != n {
        return Err(Error::InvalidParameter("port weights must have one entry per emitter".into()));
    }
    let generator = build_generator(ensemble)?;
    let d = generator.dim();
    let rho = DensityOperator::product_steady_state(generator.emitters())?;
    let b1 = CollectiveOperator::new(weights_b1.to_vec());
    let b2 = CollectiveOperator::new(weights_b2.to_vec());
    let i1 = b1.intensity(rho.data(), d).re;
    let i2 = b2.intensity(rho.data(), d).re;
    if !(i1 > 0.0) {
        return Err(Error::ZeroIntensity("port 1".into()));
    }
    if !(i2 > 0.0) {
        return Err(Error::ZeroIntensity("port 2".into()));
    }
    let split = tau.partition_point(|t| *t < 0.0);
    let mut values = vec![0.0; tau.len()];
    if split < tau.len() {
        let pos = &tau[split..];
        let r = regression_readout(&generator, b1.collapse(rho.data(), d), &b2, pos)?;
        for (v, z) in values[split..].iter_mut().zip(r) {
            *v = z.re / (i1 * i2);
        }
    }
    if split > 0 {
        let neg: Vec<f64> = tau[..split].iter().rev().map(|t| -t).collect();
        let r = regression_readout(&generator, b2.collapse(rho.data(), d), &b1, &neg)?;
        for (v, z) in values[..split].iter_mut().rev().zip(r) {
            *v = z.re / (i1 * i2);
        }
    }
    CorrelationTrace::new(tau.to_vec(), values, None)
}

/// Two-time coincidences of a pulsed experiment in which every emitter starts
/// excited at t = 0.
#[derive(Debug, Clone)]
pub struct PulsedCorrelation {
    pub tau: Vec<f64>,
    /// ∫ dt G⁽²⁾(t, t+τ), unnormalized.
    pub density: Vec<f64>,
    /// ∫ dτ of `density` over the whole real line.
    pub central_area: f64,
    /// Time-integrated mean intensity of each mode, ∫ dt ⟨σ⁺σ⁻⟩.
    pub mean_counts: (f64, f64),
}

impl PulsedCorrelation {
    /// Central-peak area over the product of the mean counts, i.e. relative to
    /// coincidences between photons from different pulses.
    pub fn normalized_area(&self) -> f64 {
        self.central_area / (self.mean_counts.0 * self.mean_counts.1)
    }
}

/// Brute-force pulsed cross-correlation. The emitters evolve under their
/// generator (pumping rates are used as given, normally zero) from the fully
/// excited state; all time integrals are taken to `horizon` by augmenting the
/// integrated state.
pub fn pulsed_cross_correlation_oracle(
    emitters: &[EmitterParams],
    weights_b1: &[C64],
    weights_b2: &[C64],
    tau: &[f64],
    horizon: f64,
) -> Result<PulsedCorrelation> {
    check_increasing(tau)?;
    let n = emitters.len();
    if weights_b1.len() != n || weights_b2.len() != n {
        return Err(Error::InvalidParameter("port weights must have one entry per emitter".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter("horizon must be positive".into()));
    }
    let generator = Generator::new(emitters)?;
    let d = generator.dim();
    let m = d * d;
    let b1 = CollectiveOperator::new(weights_b1.to_vec());
    let b2 = CollectiveOperator::new(weights_b2.to_vec());

    // y = (ρ(t), ∫ρ dt)
    let rho0 = DensityOperator::all_excited(n)?;
    let mut y = vec![C64::new(0.0, 0.0); 2 * m];
    y[..m].copy_from_slice(rho0.data());
    let mut stepper = Dopri5::new(2 * m, initial_step(&generator));
    let mut f = |x: &[C64], dx: &mut [C64]| {
        let (state, _) = x.split_at(m);
        let (dstate, dint) = dx.split_at_mut(m);
        generator.apply(state, dstate);
        dint.copy_from_slice(state);
    };
    stepper.advance(&mut f, &mut y, 0.0, horizon)?;
    let integrated = &y[m..];
    let counts = (
        b1.intensity(integrated, d).re,
        b2.intensity(integrated, d).re,
    );
    if !(counts.0 > 0.0) {
        return Err(Error::ZeroIntensity("port 1".into()));
    }
    if !(counts.1 > 0.0) {
        return Err(Error::ZeroIntensity("port 2".into()));
    }

    // One half-axis: x(τ) = e^{Lτ}(σ_a⁻ Y σ_a⁺), readout on mode b, area accumulated.
    let half = |first: &CollectiveOperator,
                second: &CollectiveOperator,
                grid: &[f64]|
     -> Result<(Vec<f64>, f64)> {
        let mut z = first.collapse(integrated, d);
        z.push(C64::new(0.0, 0.0));
        let mut st = Dopri5::new(m + 1, initial_step(&generator));
        let mut g = |x: &[C64], dx: &mut [C64]| {
            generator.apply(&x[..m], &mut dx[..m]);
            dx[m] = second.intensity(&x[..m], d);
        };
        let mut t = 0.0;
        let mut values = Vec::with_capacity(grid.len());
        for &target in grid {
            let target = target.min(horizon);
            st.advance(&mut g, &mut z, t, target)?;
            t = target;
            values.push(second.intensity(&z[..m], d).re);
        }
        st.advance(&mut g, &mut z, t, horizon)?;
        Ok((values, z[m].re))
    };

    let split = tau.partition_point(|t| *t < 0.0);
    let (pos_vals, pos_area) = half(&b1, &b2, &tau[split..])?;
    let neg_grid: Vec<f64> = tau[..split].iter().rev().map(|t| -t).collect();
    let (neg_vals, neg_area) = half(&b2, &b1, &neg_grid)?;
    let mut density = vec![0.0; tau.len()];
    density[split..].copy_from_slice(&pos_vals);
    for (v, x) in density[..split].iter_mut().rev().zip(neg_vals) {
        *v = x;
    }
    Ok(PulsedCorrelation {
        tau: tau.to_vec(),
        density,
        central_area: pos_area + neg_area,
        mean_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::EmitterParams;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn evolve_zero_time_is_identity() {
        let e = EmitterParams::new(0.0, 1.0, 0.5, 0.1).unwrap();
        let g = Generator::new(&[e, e]).unwrap();
        let rho = DensityOperator::all_excited(2).unwrap();
        assert_eq!(evolve(&g, &rho, 0.0).unwrap(), rho);
        assert!(evolve(&g, &rho, -1.0).is_err());
    }

    #[test]
    fn single_emitter_decay() {
        let e = EmitterParams::new(0.3, 1.3, 0.0, 0.4).unwrap();
        let g = Generator::new(&[e]).unwrap();
        let rho = DensityOperator::all_excited(1).unwrap();
        for t in [0.1, 1.0, 3.7] {
            let out = evolve(&g, &rho, t).unwrap();
            assert!((out.excited_population(0) - (-1.3 * t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn semigroup_property() {
        let em = [
            EmitterParams::new(1.0, 1.0, 0.4, 0.3).unwrap(),
            EmitterParams::new(-1.0, 0.6, 0.9, 0.0).unwrap(),
        ];
        let g = Generator::new(&em).unwrap();
        // a state with inter-emitter coherence
        let ens = EnsembleConfig::new(em.to_vec(), vec![c(1.0), c(1.0)], 0.0).unwrap();
        let ss = DensityOperator::product_steady_state(&em).unwrap();
        let op = CollectiveOperator::new(ens.weights.clone());
        let mut x = op.collapse(ss.data(), 4);
        let tr: C64 = (0..4).map(|i| x[i * 4 + i]).sum();
        x.iter_mut().for_each(|v| *v /= tr);
        let rho = DensityOperator::from_data(2, x).unwrap();
        let direct = evolve(&g, &rho, 1.7).unwrap();
        let split = evolve(&g, &evolve(&g, &rho, 0.6).unwrap(), 1.1).unwrap();
        let diff = direct
            .data()
            .iter()
            .zip(split.data())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn pair_coherence_rotates_and_damps() {
        // ⟨σ₁⁺σ₂⁻⟩(t) = ⟨σ₁⁺σ₂⁻⟩(0) e^{(iΔ₁₂ - Γ₁₂)t}, Δ₁₂ = ω₁ - ω₂
        let e1 = EmitterParams::new(2.5, 1.0, 0.5, 0.8).unwrap();
        let e2 = EmitterParams::new(-1.5, 0.7, 0.2, 0.1).unwrap();
        let g = Generator::new(&[e1, e2]).unwrap();
        let mut data = vec![C64::new(0.0, 0.0); 16];
        // (|ge⟩ + |eg⟩)/√2 ; index bit0 = emitter 1
        for (i, j) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            data[i * 4 + j] = c(0.5);
        }
        let rho = DensityOperator::from_data(2, data).unwrap();
        let c0 = rho.pair_coherence(0, 1);
        let gamma12 = e1.coherence_decay() + e2.coherence_decay();
        let delta12 = e1.omega - e2.omega;
        for t in [0.2, 0.9, 2.0] {
            let out = evolve(&g, &rho, t).unwrap();
            let expected = c0 * (C64::new(-gamma12, delta12) * t).exp();
            assert!((out.pair_coherence(0, 1) - expected).norm() < 1e-8);
        }
    }

    #[test]
    fn trace_and_positivity_preserved() {
        let em = [
            EmitterParams::new(1.0, 1.0, 0.4, 0.3).unwrap(),
            EmitterParams::new(-0.4, 0.6, 0.9, 0.0).unwrap(),
            EmitterParams::new(0.2, 2.0, 0.1, 1.5).unwrap(),
        ];
        let g = Generator::new(&em).unwrap();
        let mut rho = DensityOperator::all_excited(3).unwrap();
        let mut t = 0.0;
        while t < 20.0 {
            rho = evolve(&g, &rho, 2.0).unwrap();
            t += 2.0;
            rho.check_invariants().unwrap();
        }
        assert!((rho.trace().re - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_emitter_antibunching() {
        let e = EmitterParams::new(0.0, 1.2, 0.7, 0.5).unwrap();
        let ens = EnsembleConfig::equal_brightness(vec![e], 0.0).unwrap();
        let tau: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let tr = g2_oracle(&ens, &tau).unwrap();
        for (t, g) in tr.tau.iter().zip(&tr.g2) {
            assert!((g - (1.0 - (-(1.9) * t).exp())).abs() < 1e-7);
        }
        assert!(tr.g2[0].abs() < 1e-12);
    }

    #[test]
    fn zero_intensity_is_rejected() {
        let e = EmitterParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let ens = EnsembleConfig::new(vec![e], vec![c(1.0)], 0.0).unwrap();
        assert!(matches!(g2_oracle(&ens, &[0.0, 1.0]), Err(Error::ZeroIntensity(_))));
        assert!(g2_oracle(
            &EnsembleConfig::new(vec![EmitterParams::new(0.0, 1.0, 1.0, 0.0).unwrap()], vec![c(1.0)], 0.0)
                .unwrap(),
            &[-1.0, 0.0]
        )
        .is_err());
    }

    #[test]
    fn which_path_ports_are_uncorrelated() {
        let em = vec![
            EmitterParams::new(0.0, 1.0, 0.5, 0.0).unwrap(),
            EmitterParams::new(0.0, 1.0, 0.5, 0.0).unwrap(),
        ];
        let ens = EnsembleConfig::equal_brightness(em, 0.0).unwrap();
        let tau: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.25).collect();
        let tr = cross_correlation_oracle(&ens, &[c(1.0), c(0.0)], &[c(0.0), c(1.0)], &tau).unwrap();
        assert!(tr.g2.iter().all(|g| (g - 1.0).abs() < 1e-9));
    }

    #[test]
    fn single_emitter_split_is_antibunched() {
        let e = EmitterParams::new(0.0, 1.0, 0.5, 0.2).unwrap();
        let ens = EnsembleConfig::equal_brightness(vec![e], 0.0).unwrap();
        let w = [C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0)];
        let tau = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let tr = cross_correlation_oracle(&ens, &w, &w, &tau).unwrap();
        assert!(tr.g2[2].abs() < 1e-12);
        assert!((tr.g2[3] - (1.0 - (-0.75_f64).exp())).abs() < 1e-7);
    }

    #[test]
    fn pulsed_single_emitter_has_no_central_peak() {
        let e = EmitterParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let w = [C64::new(1.0, 0.0)];
        let p = pulsed_cross_correlation_oracle(&[e], &w, &w, &[-1.0, 0.0, 1.0], 40.0).unwrap();
        assert!(p.central_area.abs() < 1e-10);
        assert!((p.mean_counts.0 - 1.0).abs() < 1e-8);
    }
}
