use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::{steady_state, EmitterParams, MAX_EMITTERS};
use crate::error::{Error, Result};

/// Density matrix of the N-emitter product space in the computational basis.
///
/// Basis index bit k set means emitter k is excited. Storage is row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    n_emitters: usize,
    dim: usize,
    data: Vec<C64>,
}

impl DensityOperator {
    pub fn from_data(n_emitters: usize, data: Vec<C64>) -> Result<Self> {
        if n_emitters > MAX_EMITTERS {
            return Err(Error::TooManyEmitters(n_emitters));
        }
        let dim = 1usize << n_emitters;
        if data.len() != dim * dim {
            return Err(Error::InvalidParameter(format!(
                "expected {} entries for {} emitters, got {}",
                dim * dim,
                n_emitters,
                data.len()
            )));
        }
        Ok(Self {
            n_emitters,
            dim,
            data,
        })
    }

    /// Pure basis state |s⟩⟨s|.
    pub fn basis_state(n_emitters: usize, state: usize) -> Result<Self> {
        let dim = 1usize << n_emitters;
        if state >= dim {
            return Err(Error::InvalidParameter(format!("basis state {state} out of range")));
        }
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        data[state * dim + state] = C64::new(1.0, 0.0);
        Self::from_data(n_emitters, data)
    }

    /// All emitters excited.
    pub fn all_excited(n_emitters: usize) -> Result<Self> {
        Self::basis_state(n_emitters, (1usize << n_emitters) - 1)
    }

    /// Product of the single-emitter steady states; diagonal in this basis.
    pub fn product_steady_state(emitters: &[EmitterParams]) -> Result<Self> {
        let n = emitters.len();
        if n > MAX_EMITTERS {
            return Err(Error::TooManyEmitters(n));
        }
        let occ: Vec<_> = emitters.iter().map(steady_state).collect();
        let dim = 1usize << n;
        let mut data = vec![C64::new(0.0, 0.0); dim * dim];
        for s in 0..dim {
            let p: f64 = occ
                .iter()
                .enumerate()
                .map(|(k, o)| if s >> k & 1 == 1 { o.excited } else { o.ground })
                .product();
            data[s * dim + s] = C64::new(p, 0.0);
        }
        Self::from_data(n, data)
    }

    pub fn n_emitters(&self) -> usize {
        self.n_emitters
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<C64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.dim + col]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    /// Largest |ρ_ij - conj(ρ_ji)|.
    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0_f64;
        for i in 0..d {
            for j in i..d {
                worst = worst.max((self.data[i * d + j] - self.data[j * d + i].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        let d = self.dim;
        let m = DMatrix::from_fn(d, d, |i, j| {
            0.5 * (self.data[i * d + j] + self.data[j * d + i].conj())
        });
        m.symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Population of emitter k, Tr(σ_k⁺σ_k⁻ ρ).
    pub fn excited_population(&self, k: usize) -> f64 {
        let bit = 1usize << k;
        (0..self.dim)
            .filter(|s| s & bit != 0)
            .map(|s| self.data[s * self.dim + s].re)
            .sum()
    }

    /// Coherence ⟨σ_k⁺σ_j⁻⟩ = Tr(σ_k⁺σ_j⁻ ρ) for k ≠ j.
    pub fn pair_coherence(&self, k: usize, j: usize) -> C64 {
        let (bk, bj) = (1usize << k, 1usize << j);
        let d = self.dim;
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..d {
            if a & bk != 0 && a & bj == 0 {
                acc += self.data[((a ^ bk) | bj) * d + a];
            }
        }
        acc
    }

    /// Checks unit trace, hermiticity and positivity at the documented tolerances.
    pub fn check_invariants(&self) -> Result<()> {
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-9 {
            return Err(Error::ModelAssumption(format!("trace {tr} differs from 1")));
        }
        let herm = self.hermiticity_error();
        if herm > 1e-12 {
            return Err(Error::ModelAssumption(format!("hermiticity error {herm:e}")));
        }
        let min = self.min_eigenvalue();
        if min < -1e-9 {
            return Err(Error::ModelAssumption(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_steady_state_is_normalized() {
        let em = vec![
            EmitterParams::new(0.0, 1.0, 0.5, 0.2).unwrap(),
            EmitterParams::new(1.0, 2.0, 1.0, 0.0).unwrap(),
            EmitterParams::new(-1.0, 0.3, 0.9, 1.0).unwrap(),
        ];
        let rho = DensityOperator::product_steady_state(&em).unwrap();
        rho.check_invariants().unwrap();
        for (k, e) in em.iter().enumerate() {
            assert!((rho.excited_population(k) - steady_state(e).excited).abs() < 1e-14);
        }
        assert_eq!(rho.pair_coherence(0, 1), C64::new(0.0, 0.0));
    }

    #[test]
    fn basis_states() {
        let rho = DensityOperator::all_excited(2).unwrap();
        assert_eq!(rho.get(3, 3), C64::new(1.0, 0.0));
        assert_eq!(rho.excited_population(0), 1.0);
        assert!(DensityOperator::basis_state(2, 4).is_err());
        assert!(DensityOperator::all_excited(9).is_err());
    }
}
