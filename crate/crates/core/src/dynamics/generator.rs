use num_complex::Complex64 as C64;

use super::{EmitterParams, EnsembleConfig, MAX_EMITTERS};
use crate::error::{Error, Result};

/// Matrix-free Lindblad generator of independent two-level emitters.
///
/// The action on a row-major density matrix of dimension 2^N is the sum of
/// single-emitter superoperators, each touching only the bit of its emitter.
#[derive(Debug, Clone)]
pub struct Generator {
    sites: Vec<EmitterParams>,
    dim: usize,
}

pub fn build_generator(ensemble: &EnsembleConfig) -> Result<Generator> {
    Generator::new(&ensemble.recentered().emitters)
}

impl Generator {
    pub fn new(emitters: &[EmitterParams]) -> Result<Self> {
        if emitters.len() > MAX_EMITTERS {
            return Err(Error::TooManyEmitters(emitters.len()));
        }
        if emitters.is_empty() {
            return Err(Error::InvalidParameter("generator needs at least one emitter".into()));
        }
        for e in emitters {
            e.validate()?;
        }
        Ok(Self {
            sites: emitters.to_vec(),
            dim: 1usize << emitters.len(),
        })
    }

    pub fn n_emitters(&self) -> usize {
        self.sites.len()
    }

    /// Hilbert-space dimension 2^N.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn emitters(&self) -> &[EmitterParams] {
        &self.sites
    }

    /// Largest rate magnitude of the generator, used to seed step sizes.
    pub fn rate_scale(&self) -> f64 {
        self.sites
            .iter()
            .map(|s| s.gamma + s.gamma_p + s.gamma_d + s.omega.abs())
            .fold(0.0, f64::max)
    }

    /// out = L(rho).
    pub fn apply(&self, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        debug_assert_eq!(rho.len(), d * d);
        debug_assert_eq!(out.len(), d * d);
        out.fill(C64::new(0.0, 0.0));
        for (k, s) in self.sites.iter().enumerate() {
            let bit = 1usize << k;
            let half = 0.5 * (s.gamma + s.gamma_p + s.gamma_d);
            // ρ_eg rotates as e^{-iωt}, ρ_ge as e^{+iωt}.
            let eg = C64::new(-half, -s.omega);
            let ge = C64::new(-half, s.omega);
            for i in 0..d {
                let ie = i & bit != 0;
                let row = i * d;
                for j in 0..d {
                    let je = j & bit != 0;
                    let idx = row + j;
                    out[idx] += match (ie, je) {
                        (true, true) => {
                            rho[idx] * -s.gamma + rho[(i ^ bit) * d + (j ^ bit)] * s.gamma_p
                        }
                        (false, false) => {
                            rho[(i | bit) * d + (j | bit)] * s.gamma - rho[idx] * s.gamma_p
                        }
                        (true, false) => eg * rho[idx],
                        (false, true) => ge * rho[idx],
                    };
                }
            }
        }
    }

    /// Dense superoperator acting on row-major vec(ρ). Only sensible for
    /// small N; used for inspection and tests.
    pub fn to_dense(&self) -> Vec<Vec<C64>> {
        let n = self.dim * self.dim;
        let mut cols = vec![vec![C64::new(0.0, 0.0); n]; n];
        let mut basis = vec![C64::new(0.0, 0.0); n];
        for (c, col) in cols.iter_mut().enumerate() {
            basis[c] = C64::new(1.0, 0.0);
            self.apply(&basis, col);
            basis[c] = C64::new(0.0, 0.0);
        }
        // transpose columns into rows
        (0..n).map(|r| (0..n).map(|c| cols[c][r]).collect()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::DensityOperator;

    fn emitters() -> Vec<EmitterParams> {
        vec![
            EmitterParams::new(0.7, 1.0, 0.4, 0.3).unwrap(),
            EmitterParams::new(-1.2, 2.0, 1.1, 0.0).unwrap(),
            EmitterParams::new(0.5, 0.3, 0.8, 2.0).unwrap(),
        ]
    }

    #[test]
    fn annihilates_product_steady_state() {
        for n in 1..=3 {
            let em = &emitters()[..n];
            let g = Generator::new(em).unwrap();
            let rho = DensityOperator::product_steady_state(em).unwrap();
            let mut out = vec![C64::new(0.0, 0.0); rho.data().len()];
            g.apply(rho.data(), &mut out);
            let worst = out.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(worst < 1e-10, "n = {n}: residual {worst}");
        }
    }

    #[test]
    fn preserves_trace_column_by_column() {
        let g = Generator::new(&emitters()[..2]).unwrap();
        let d = g.dim();
        let dense = g.to_dense();
        // d tr(ρ)/dt = Σ_i (Lρ)_ii must vanish for every basis matrix.
        for c in 0..d * d {
            let s: C64 = (0..d).map(|i| dense[i * d + i][c]).sum();
            assert!(s.norm() < 1e-14);
        }
    }

    #[test]
    fn dimension_guard() {
        let e = emitters()[0];
        assert!(matches!(
            Generator::new(&vec![e; 9]),
            Err(Error::TooManyEmitters(9))
        ));
        assert_eq!(Generator::new(&vec![e; 8]).unwrap().dim(), 256);
    }

    #[test]
    fn single_site_rates() {
        let e = EmitterParams::new(2.0, 1.5, 0.5, 1.0).unwrap();
        let g = Generator::new(&[e]).unwrap();
        // basis index 1 = excited
        let mut rho = vec![C64::new(0.0, 0.0); 4];
        rho[1 * 2 + 0] = C64::new(1.0, 0.0); // |e><g|
        let mut out = vec![C64::new(0.0, 0.0); 4];
        g.apply(&rho, &mut out);
        assert!((out[2] - C64::new(-e.coherence_decay(), -2.0)).norm() < 1e-15);
    }
}
