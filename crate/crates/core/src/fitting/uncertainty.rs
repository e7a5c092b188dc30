use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Condition-number threshold above which JᵀJ is treated as singular.
const MAX_CONDITION: f64 = 1e12;

/// Standard errors sqrt(diag((JᵀJ)⁻¹)) for residuals already divided by σ.
pub fn curvature_errors(jacobian: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = jacobian.ncols();
    if n == 0 {
        return Ok(Vec::new());
    }
    let jtj = jacobian.transpose() * jacobian;
    let eig = jtj.symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || !(min > max / MAX_CONDITION) {
        return Err(Error::SingularCurvature);
    }
    let q = &eig.eigenvectors;
    Ok((0..n)
        .map(|i| {
            (0..n)
                .map(|k| q[(i, k)] * q[(i, k)] / eig.eigenvalues[k])
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Parametric bootstrap: `refit` receives `model + σ·ξ` for `resamples`
/// Gaussian draws and returns the refitted parameters (or `None` if that
/// refit failed). The sample standard deviation of each parameter is returned.
pub fn bootstrap_errors<F>(
    model: &[f64],
    sigma: &[f64],
    resamples: usize,
    seed: u64,
    mut refit: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(resamples);
    let mut data = vec![0.0; model.len()];
    for _ in 0..resamples {
        for ((d, m), s) in data.iter_mut().zip(model).zip(sigma) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *d = m + s * xi;
        }
        if let Some(p) = refit(&data) {
            draws.push(p);
        }
    }
    if draws.len() < 2 {
        return Err(Error::NoConvergence("bootstrap refits failed".into()));
    }
    let k = draws[0].len();
    let n = draws.len() as f64;
    Ok((0..k)
        .map(|i| {
            let mean = draws.iter().map(|d| d[i]).sum::<f64>() / n;
            (draws.iter().map(|d| (d[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        })
        .collect())
}
