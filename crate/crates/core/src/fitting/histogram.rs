use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{uniform_spacing, CorrelationTrace};

/// Minimum number of bins inside the normalization window.
pub const MIN_WINDOW_BINS: usize = 20;

/// Raw start–stop coincidence counts on uniform delay bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_centers: Vec<f64>,
    pub counts: Vec<u64>,
    pub bin_width: f64,
    pub label: String,
}

impl CoincidenceHistogram {
    pub fn new(bin_centers: Vec<f64>, counts: Vec<u64>, label: impl Into<String>) -> Result<Self> {
        if bin_centers.len() != counts.len() {
            return Err(Error::InvalidParameter(format!(
                "{} bin centers but {} counts",
                bin_centers.len(),
                counts.len()
            )));
        }
        let bin_width = uniform_spacing(&bin_centers)?;
        Ok(Self {
            bin_centers,
            counts,
            bin_width,
            label: label.into(),
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Divides the histogram by the mean count of the bins whose |τ| lies in
/// `[window.0, window.1]`, i.e. both wings of the coincidence plot.
///
/// Per-bin errors combine the Poisson error of the bin with the error of the
/// baseline mean: σ_i² = max(c_i, 1)/μ² + g_i²/(n_w μ).
pub fn normalize_histogram(
    hist: &CoincidenceHistogram,
    window: (f64, f64),
) -> Result<CorrelationTrace> {
    let (lo, hi) = window;
    if !(lo >= 0.0) || !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "baseline window ({lo}, {hi}) must satisfy 0 <= min < max"
        )));
    }
    let in_window: Vec<u64> = hist
        .bin_centers
        .iter()
        .zip(&hist.counts)
        .filter(|(t, _)| (lo..=hi).contains(&t.abs()))
        .map(|(_, c)| *c)
        .collect();
    if in_window.len() < MIN_WINDOW_BINS {
        return Err(Error::EmptyWindow {
            found: in_window.len(),
            needed: MIN_WINDOW_BINS,
        });
    }
    let nw = in_window.len() as f64;
    let mu = in_window.iter().sum::<u64>() as f64 / nw;
    if mu <= 0.0 {
        return Err(Error::ZeroBaseline);
    }
    let g2: Vec<f64> = hist.counts.iter().map(|c| *c as f64 / mu).collect();
    let sigma = hist
        .counts
        .iter()
        .zip(&g2)
        .map(|(c, g)| ((*c).max(1) as f64 / (mu * mu) + g * g / (nw * mu)).sqrt())
        .collect();
    CorrelationTrace::new(hist.bin_centers.clone(), g2, Some(sigma))
}
