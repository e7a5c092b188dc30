//! Fast evaluation of the IRF-convolved analytic g² on a data grid.
//!
//! The model is a sum of terms e^{−z|τ|}. Away from τ = 0 and from the grid
//! ends the discrete convolution of such a term is the term itself times a
//! constant A(z) = Σ_m K_m e^{−z(m−H)h}; only the remaining points need the
//! explicit sum.

use num_complex::Complex64 as C64;

use crate::correlation::{AnalyticG2Params, GaussianKernel};
use crate::error::{Error, Result};
use crate::trace::uniform_spacing;

/// Re-anchor the exponential recurrences after this many steps.
const ANCHOR: usize = 64;

#[derive(Debug, Clone)]
struct Conv {
    anchors: Vec<f64>,
    h: f64,
    len: usize,
    stride: usize,
    taps: Vec<f64>,
    half: usize,
    /// Maximal runs [start, end) of data points whose kernel window lies inside
    /// the grid on one side of 0, with that side.
    runs: Vec<(usize, usize, bool)>,
    /// The remaining data points.
    boundary: Vec<usize>,
    /// Merged fine-index ranges covering the windows of the other points,
    /// and the range each such point falls in.
    segments: Vec<(isize, isize)>,
    segment_of: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ModelGrid {
    tau: Vec<f64>,
    conv: Option<Conv>,
}

impl ModelGrid {
    /// Prepares evaluation on `tau`. With a positive IRF width the grid must be
    /// uniform; grids coarser than fwhm/10 are evaluated on an integer
    /// refinement and subsampled.
    pub fn new(tau: &[f64], irf_fwhm: f64) -> Result<Self> {
        if !(irf_fwhm >= 0.0) {
            return Err(Error::InvalidParameter("irf_fwhm must be >= 0".into()));
        }
        if irf_fwhm == 0.0 {
            return Ok(Self {
                tau: tau.to_vec(),
                conv: None,
            });
        }
        let step = uniform_spacing(tau)?;
        let stride = (step / (irf_fwhm / 10.0) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = step / stride as f64;
        let kernel = GaussianKernel::new(irf_fwhm, h)?;
        let half = kernel.taps().len() / 2;
        let mut conv = Conv {
            anchors: tau.to_vec(),
            h,
            len: (tau.len() - 1) * stride + 1,
            stride,
            taps: kernel.taps().to_vec(),
            half,
            runs: Vec::new(),
            boundary: Vec::new(),
            segments: Vec::new(),
            segment_of: Vec::new(),
        };
        let (hh, last) = (half as isize, conv.len as isize - 1);
        for i in 0..tau.len() {
            let j = (i * stride) as isize;
            let inside = j - hh >= 0 && j + hh <= last;
            let one_side = inside && {
                let (lo, hi) = (conv.t((j - hh) as usize), conv.t((j + hh) as usize));
                lo >= 0.0 || hi <= 0.0
            };
            let positive = tau[i] >= 0.0;
            if one_side {
                match conv.runs.last_mut() {
                    Some(run) if run.1 == i && run.2 == positive => run.1 = i + 1,
                    _ => conv.runs.push((i, i + 1, positive)),
                }
                conv.segment_of.push(usize::MAX);
                continue;
            }
            conv.boundary.push(i);
            let (lo, hi) = (j - hh, j + hh);
            match conv.segments.last_mut() {
                Some(seg) if lo <= seg.1 + 1 => seg.1 = seg.1.max(hi),
                _ => conv.segments.push((lo, hi)),
            }
            conv.segment_of.push(conv.segments.len() - 1);
        }
        Ok(Self {
            tau: tau.to_vec(),
            conv: Some(conv),
        })
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }

    /// Writes the (convolved) g² into `out`.
    pub fn evaluate(&self, p: &AnalyticG2Params, out: &mut [f64]) {
        let Some(conv) = &self.conv else {
            for (o, t) in out.iter_mut().zip(&self.tau) {
                *o = p.value(*t);
            }
            return;
        };
        let n = p.n();
        // identical exponents (equal rates, shared dephasing) are merged
        let mut terms: Vec<(C64, f64)> = Vec::with_capacity(n * (n + 1) / 2);
        let mut push = |z: C64, c: f64| match terms.iter_mut().find(|(w, _)| *w == z) {
            Some(t) => t.1 += c,
            None => terms.push((z, c)),
        };
        for s in &p.rate_sums {
            push(C64::new(*s, 0.0), 1.0);
        }
        for k in 0..n {
            for j in k + 1..n {
                let i = k * n + j;
                push(C64::new(p.decoherence[i], p.detuning[i]), -2.0);
            }
        }
        let n2 = (n * n) as f64;
        out.fill(0.0);
        for (z, c) in terms {
            if c != 0.0 {
                conv.add_term(z, -c / n2, out);
            }
        }
        for o in out.iter_mut() {
            *o += 1.0;
        }
    }
}

impl Conv {
    /// Fine-grid time, offset from the nearest data point at or below it.
    fn t(&self, j: usize) -> f64 {
        self.anchors[j / self.stride] + (j % self.stride) as f64 * self.h
    }

    /// acc_i += c · Re (K ⊗ e^{−z|t|})(t_{i·stride})
    fn add_term(&self, z: C64, c: f64, acc: &mut [f64]) {
        let hh = self.half as isize;
        let last = self.len as isize - 1;
        let a: C64 = self
            .taps
            .iter()
            .enumerate()
            .map(|(m, w)| w * (-z * ((m as isize - hh) as f64 * self.h)).exp())
            .sum();
        let raw = |j: isize| (-z * self.t(j.clamp(0, last) as usize).abs()).exp();
        let ca = a * c;
        let step = (-z * (self.stride as f64 * self.h)).exp();
        let inv_step = (z * (self.stride as f64 * self.h)).exp();
        for &(start, end, positive) in &self.runs {
            let ratio = if positive { step } else { inv_step };
            let mut i = start;
            while i < end {
                let mut value = raw((i * self.stride) as isize) * ca;
                let stop = end.min(i + ANCHOR);
                for out in &mut acc[i..stop] {
                    *out += value.re;
                    value *= ratio;
                }
                i = stop;
            }
        }

        let cached: Vec<Vec<C64>> = self
            .segments
            .iter()
            .map(|(lo, hi)| (*lo..=*hi).map(raw).collect())
            .collect();
        for &i in &self.boundary {
            let j = (i * self.stride) as isize;
            let seg = self.segment_of[i];
            let base = (j - hh - self.segments[seg].0) as usize;
            let vals = &cached[seg][base..base + self.taps.len()];
            let e: C64 = self.taps.iter().zip(vals).map(|(w, v)| v * w).sum();
            acc[i] += c * e.re;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::g2_model;
    use crate::trace::uniform_grid;

    fn params() -> Vec<AnalyticG2Params> {
        vec![
            AnalyticG2Params::from_parts(&[1.0, 1.0], &[3.0, 3.0], &[0.0, 29.0]).unwrap(),
            AnalyticG2Params::from_parts(&[0.7, 1.3, 2.0], &[0.5, 2.0, 0.1], &[0.0, -8.0, 15.0])
                .unwrap(),
            AnalyticG2Params::from_parts(&[1.0], &[0.0], &[0.0]).unwrap(),
        ]
    }

    #[test]
    fn matches_reference_convolution() {
        for (lo, hi) in [(-10.0, 10.0), (-1.3, 4.0), (0.5, 3.0), (-3.0, -0.2)] {
            let tau = uniform_grid(lo, hi, 0.0025).unwrap();
            let grid = ModelGrid::new(&tau, 0.035).unwrap();
            for p in params() {
                let reference = g2_model(&p, &tau, 0.035).unwrap();
                let mut out = vec![0.0; tau.len()];
                grid.evaluate(&p, &mut out);
                let worst = out
                    .iter()
                    .zip(&reference.g2)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(worst < 1e-12, "[{lo}, {hi}]: {worst}");
            }
        }
    }

    #[test]
    fn coarse_grid_is_refined() {
        let coarse = uniform_grid(-2.0, 2.0, 0.016).unwrap();
        let grid = ModelGrid::new(&coarse, 0.035).unwrap();
        let fine = uniform_grid(-2.0, 2.0, 0.0032).unwrap();
        for p in params() {
            let reference = g2_model(&p, &fine, 0.035).unwrap();
            let mut out = vec![0.0; coarse.len()];
            grid.evaluate(&p, &mut out);
            for (i, v) in out.iter().enumerate() {
                assert!((v - reference.g2[5 * i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_irf_is_pointwise() {
        let tau = vec![-1.0, 0.0, 0.1, 2.5];
        let grid = ModelGrid::new(&tau, 0.0).unwrap();
        let p = &params()[1];
        let mut out = vec![0.0; 4];
        grid.evaluate(p, &mut out);
        for (o, t) in out.iter().zip(&tau) {
            assert_eq!(*o, p.value(*t));
        }
    }
}
