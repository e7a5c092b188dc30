//! Phase-only holograms in the back focal plane of a lens and the fields they
//! produce in the sample (or fiber) plane.
//!
//! Mask-plane pixel p sits at x = (p − n/2)·pitch. The lens maps spatial
//! frequency ν to x_f = λ·f_eff·ν, so focal-plane pixels are λ·f_eff/(n·pitch)
//! wide and focal positions are sample-plane micrometres. Fields on the mask
//! plane are apodized by a Gaussian pupil, which is also the illumination of
//! the excitation modulator.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hom::TransferMatrix;
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalGrid {
    pub nx: usize,
    pub ny: usize,
    /// Modulator pixel pitch, μm.
    pub pitch: f64,
    /// μm.
    pub wavelength: f64,
    /// mm.
    pub f_eff: f64,
    /// 1/e amplitude radius of the pupil on the mask plane, μm.
    pub pupil_waist: f64,
}

impl OpticalGrid {
    /// Grid with the default pupil n·pitch/(2π), whose focal spot has a waist
    /// of two focal-plane pixels.
    pub fn new(nx: usize, ny: usize, pitch: f64, wavelength: f64, f_eff: f64) -> Result<Self> {
        let grid = Self {
            nx,
            ny,
            pitch,
            wavelength,
            f_eff,
            pupil_waist: nx.min(ny) as f64 * pitch / TAU,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid whose focal plane spans `fov` μm.
    pub fn with_field_of_view(n: usize, pitch: f64, wavelength: f64, fov: f64) -> Result<Self> {
        if !(fov > 0.0) {
            return Err(Error::InvalidParameter("field of view must be > 0".into()));
        }
        Self::new(n, n, pitch, wavelength, fov * pitch / wavelength / 1000.0)
    }

    /// 512×512, 8 μm pixels at 971.17 nm, 30 μm focal field of view: a 15 μm
    /// scan area fills the central quarter.
    pub fn standard() -> Self {
        Self::with_field_of_view(512, 8.0, 0.97117, 30.0).expect("valid default grid")
    }

    pub fn with_pupil_waist(mut self, waist: f64) -> Result<Self> {
        self.pupil_waist = waist;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, n) in [("nx", self.nx), ("ny", self.ny)] {
            if n < 2 || !n.is_power_of_two() {
                return Err(Error::InvalidParameter(format!("{name} must be a power of two >= 2, got {n}")));
            }
        }
        for (name, v) in [("pitch", self.pitch), ("wavelength", self.wavelength), ("f_eff", self.f_eff)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite and > 0")));
            }
        }
        if !(self.pupil_waist >= 2.0 * self.pitch) || !self.pupil_waist.is_finite() {
            return Err(Error::UnderResolved {
                waist: self.pupil_waist,
                pitch: self.pitch,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn focal_length_um(&self) -> f64 {
        self.f_eff * 1000.0
    }

    /// Pixel size (x, y) in μm.
    pub fn pixel(&self, plane: Plane) -> (f64, f64) {
        match plane {
            Plane::Mask => (self.pitch, self.pitch),
            Plane::Focal => {
                let s = self.wavelength * self.focal_length_um() / self.pitch;
                (s / self.nx as f64, s / self.ny as f64)
            }
        }
    }

    /// Focal-plane extent (x, y), μm.
    pub fn field_of_view(&self) -> (f64, f64) {
        let s = self.wavelength * self.focal_length_um() / self.pitch;
        (s, s)
    }

    /// Coordinates of pixel (ix, iy).
    pub fn coordinate(&self, plane: Plane, ix: usize, iy: usize) -> (f64, f64) {
        let (px, py) = self.pixel(plane);
        (
            (ix as f64 - (self.nx / 2) as f64) * px,
            (iy as f64 - (self.ny / 2) as f64) * py,
        )
    }

    /// Fractional pixel index of a position.
    pub fn index_of(&self, plane: Plane, r: (f64, f64)) -> (f64, f64) {
        let (px, py) = self.pixel(plane);
        (r.0 / px + (self.nx / 2) as f64, r.1 / py + (self.ny / 2) as f64)
    }

    /// Transverse wavevector (rad/μm) on the mask plane that focuses at `r`.
    pub fn wavevector(&self, r: (f64, f64)) -> (f64, f64) {
        let s = TAU / (self.wavelength * self.focal_length_um());
        (s * r.0, s * r.1)
    }

    /// Focal-plane displacement produced by a linear phase with wavevector `k`.
    pub fn focal_shift(&self, k: (f64, f64)) -> (f64, f64) {
        let s = self.wavelength * self.focal_length_um() / TAU;
        (s * k.0, s * k.1)
    }

    /// Waist of the focal spot of the pupil, μm.
    pub fn focal_waist(&self) -> f64 {
        self.wavelength * self.focal_length_um() / (PI * self.pupil_waist)
    }

    fn check_in_view(&self, r: (f64, f64)) -> Result<()> {
        let (px, py) = self.pixel(Plane::Focal);
        let (fx, fy) = self.field_of_view();
        let inside = |v: f64, half: f64, p: f64| v.is_finite() && v >= -half && v <= half - p;
        if inside(r.0, fx / 2.0, px) && inside(r.1, fy / 2.0, py) {
            Ok(())
        } else {
            Err(Error::Aliasing(format!(
                "position ({}, {}) μm lies outside the {fx}×{fy} μm field of view",
                r.0, r.1
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// Back focal plane, where the modulator sits.
    Mask,
    /// Sample or fiber plane.
    Focal,
}

impl Plane {
    fn other(self) -> Self {
        match self {
            Plane::Mask => Plane::Focal,
            Plane::Focal => Plane::Mask,
        }
    }
}

/// Sampled transverse field, row-major with `nx` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: OpticalGrid,
    pub plane: Plane,
    pub data: Vec<C64>,
}

impl ComplexField {
    pub fn new(grid: OpticalGrid, plane: Plane, data: Vec<C64>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidParameter("field values must be finite".into()));
        }
        Ok(Self { grid, plane, data })
    }

    fn from_fn(grid: OpticalGrid, plane: Plane, f: impl Fn(f64, f64) -> C64 + Sync) -> Self {
        let data = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let (x, y) = grid.coordinate(plane, i % grid.nx, i / grid.nx);
                f(x, y)
            })
            .collect();
        Self { grid, plane, data }
    }

    fn area(&self) -> f64 {
        let (px, py) = self.grid.pixel(self.plane);
        px * py
    }

    /// Σ|a|²·dA.
    pub fn power(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.area()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid || self.plane != other.plane {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// ⟨self|other⟩ = Σ conj(self)·other·dA.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        self.check_compatible(other)?;
        let s: C64 = self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.area())
    }

    pub fn normalized(mut self) -> Result<Self> {
        let p = self.power();
        if !(p > 0.0) {
            return Err(Error::ZeroIntensity("cannot normalize a zero field".into()));
        }
        let s = 1.0 / p.sqrt();
        self.data.iter_mut().for_each(|v| *v *= s);
        Ok(self)
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Σ_k c_k·f_k over fields on a common grid.
    pub fn combination(terms: &[(C64, &ComplexField)]) -> Result<Self> {
        let (_, first) = terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty combination".into()))?;
        let mut out = first.scaled(C64::new(0.0, 0.0));
        for (c, f) in terms {
            out.check_compatible(f)?;
            for (o, v) in out.data.iter_mut().zip(&f.data) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    pub fn intensity(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Power inside a disc.
    pub fn power_within(&self, center: (f64, f64), radius: f64) -> f64 {
        let mut sum = 0.0;
        self.visit_disc(center, radius, |i, _| sum += self.data[i].norm_sqr());
        sum * self.area()
    }

    /// Position of the brightest pixel inside a disc.
    pub fn peak_near(&self, center: (f64, f64), radius: f64) -> Option<(f64, f64)> {
        let mut best: Option<(f64, (f64, f64))> = None;
        self.visit_disc(center, radius, |i, r| {
            let v = self.data[i].norm_sqr();
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, r));
            }
        });
        best.map(|(_, r)| r)
    }

    fn visit_disc(&self, center: (f64, f64), radius: f64, mut f: impl FnMut(usize, (f64, f64))) {
        let g = &self.grid;
        let (px, py) = g.pixel(self.plane);
        let (cx, cy) = g.index_of(self.plane, center);
        let span = |c: f64, p: f64, n: usize| {
            let lo = (c - radius / p).floor().max(0.0) as usize;
            let hi = ((c + radius / p).ceil().max(0.0) as usize).min(n - 1);
            lo..=hi
        };
        for iy in span(cy, py, g.ny) {
            for ix in span(cx, px, g.nx) {
                let r = g.coordinate(self.plane, ix, iy);
                if (r.0 - center.0).powi(2) + (r.1 - center.1).powi(2) <= radius * radius {
                    f(iy * g.nx + ix, r);
                }
            }
        }
    }
}

/// Phase-only hologram; `phase` already contains the carrier and is wrapped
/// into [−π, π).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMask {
    pub grid: OpticalGrid,
    pub phase: Vec<f64>,
    /// Wavevector of the blazed carrier grating, rad/μm.
    pub carrier: (f64, f64),
}

impl PhaseMask {
    pub fn new(grid: OpticalGrid, phase: Vec<f64>, carrier: (f64, f64)) -> Result<Self> {
        grid.validate()?;
        if phase.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        if phase.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("mask phases must be finite".into()));
        }
        Ok(Self {
            grid,
            phase: phase.into_iter().map(wrap_phase).collect(),
            carrier,
        })
    }

    pub fn zero(grid: OpticalGrid) -> Self {
        Self {
            grid,
            phase: vec![0.0; grid.len()],
            carrier: (0.0, 0.0),
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            grid: self.grid,
            phase: self.phase.iter().map(|p| wrap_phase(-p)).collect(),
            carrier: (-self.carrier.0, -self.carrier.1),
        }
    }

    /// Adds a blazed grating with wavevector `k`.
    pub fn with_carrier(&self, k: (f64, f64)) -> Self {
        let g = self.grid;
        let phase = self
            .phase
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (x, y) = g.coordinate(Plane::Mask, i % g.nx, i / g.nx);
                wrap_phase(p + k.0 * x + k.1 * y)
            })
            .collect();
        Self {
            grid: g,
            phase,
            carrier: (self.carrier.0 + k.0, self.carrier.1 + k.1),
        }
    }

    /// Focal-plane displacement caused by the carrier.
    pub fn carrier_shift(&self) -> (f64, f64) {
        self.grid.focal_shift(self.carrier)
    }
}

/// Wraps into [−π, π).
pub fn wrap_phase(p: f64) -> f64 {
    let w = p - TAU * ((p + PI) / TAU).floor();
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// A target position in the focal plane with its complex amplitude weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotSpec {
    /// μm.
    pub position: (f64, f64),
    pub weight: C64,
}

impl SpotSpec {
    pub fn new(position: (f64, f64), weight: C64) -> Self {
        Self { position, weight }
    }
}

/// Unit-power mask-plane mode that focuses at `spot.position`: a tilted plane
/// wave over the pupil. The weight is not applied.
pub fn plane_wave_mode(spot: &SpotSpec, grid: &OpticalGrid) -> Result<ComplexField> {
    grid.validate()?;
    grid.check_in_view(spot.position)?;
    let (kx, ky) = grid.wavevector(spot.position);
    let w = grid.pupil_waist;
    ComplexField::from_fn(*grid, Plane::Mask, |x, y| {
        C64::from_polar((-(x * x + y * y) / (w * w)).exp(), kx * x + ky * y)
    })
    .normalized()
}

/// The pupil itself: the beam illuminating a modulator.
pub fn illumination(grid: &OpticalGrid) -> Result<ComplexField> {
    plane_wave_mode(&SpotSpec::new((0.0, 0.0), C64::new(1.0, 0.0)), grid)
}

/// Unit-power Gaussian exp(−|r − c|²/w0²) on either plane.
pub fn gaussian_mode(center: (f64, f64), w0: f64, grid: &OpticalGrid, plane: Plane) -> Result<ComplexField> {
    grid.validate()?;
    let (px, py) = grid.pixel(plane);
    let pitch = px.max(py);
    if !(w0 >= 2.0 * pitch * (1.0 - 1e-12)) || !w0.is_finite() {
        return Err(Error::UnderResolved { waist: w0, pitch });
    }
    ComplexField::from_fn(*grid, plane, |x, y| {
        let r2 = (x - center.0).powi(2) + (y - center.1).powi(2);
        C64::new((-r2 / (w0 * w0)).exp(), 0.0)
    })
    .normalized()
}

struct Transform {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl Transform {
    fn new(grid: &OpticalGrid, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        if inverse {
            Self {
                rows: planner.plan_fft_inverse(grid.nx),
                cols: planner.plan_fft_inverse(grid.ny),
            }
        } else {
            Self {
                rows: planner.plan_fft_forward(grid.nx),
                cols: planner.plan_fft_forward(grid.ny),
            }
        }
    }

    /// Unitary DFT about the grid centre, in place.
    fn apply(&self, grid: &OpticalGrid, data: &mut [C64]) {
        let (nx, ny) = (grid.nx, grid.ny);
        // (−1)^(ix+iy) before and after centres both axes
        let checker = |data: &mut [C64], s: f64| {
            data.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
                for (ix, v) in row.iter_mut().enumerate() {
                    *v *= if (ix + iy) % 2 == 0 { s } else { -s };
                }
            });
        };
        checker(data, 1.0);
        data.par_chunks_mut(nx).for_each(|row| self.rows.process(row));
        let mut columns = vec![C64::new(0.0, 0.0); nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                columns[ix * ny + iy] = data[iy * nx + ix];
            }
        }
        columns.par_chunks_mut(ny).for_each(|col| self.cols.process(col));
        for ix in 0..nx {
            for iy in 0..ny {
                data[iy * nx + ix] = columns[ix * ny + iy];
            }
        }
        let parity = if (nx / 2 + ny / 2) % 2 == 0 { 1.0 } else { -1.0 };
        checker(data, parity / ((nx * ny) as f64).sqrt());
    }
}

fn transform(field: &ComplexField, inverse: bool) -> ComplexField {
    let grid = field.grid;
    let mut data = field.data.clone();
    Transform::new(&grid, inverse).apply(&grid, &mut data);
    let plane = field.plane.other();
    let (ax, ay) = grid.pixel(field.plane);
    let (bx, by) = grid.pixel(plane);
    let s = ((ax * ay) / (bx * by)).sqrt();
    data.iter_mut().for_each(|v| *v *= s);
    ComplexField { grid, plane, data }
}

/// Field one focal length behind a lens. Applied twice it returns the input
/// with inverted coordinates.
pub fn propagate_lens(field: &ComplexField) -> ComplexField {
    transform(field, false)
}

/// Inverse of [`propagate_lens`]: the conjugate lens transform.
pub fn back_propagate(field: &ComplexField) -> ComplexField {
    transform(field, true)
}

pub fn apply_mask(field: &ComplexField, mask: &PhaseMask) -> Result<ComplexField> {
    if field.grid != mask.grid || field.plane != Plane::Mask {
        return Err(Error::GridMismatch);
    }
    let mut out = field.clone();
    out.data
        .iter_mut()
        .zip(&mask.phase)
        .for_each(|(v, p)| *v *= C64::from_polar(1.0, *p));
    Ok(out)
}

/// Focal field produced by a mask under pupil illumination.
pub fn far_field(mask: &PhaseMask) -> Result<ComplexField> {
    Ok(propagate_lens(&apply_mask(&illumination(&mask.grid)?, mask)?))
}

/// |⟨mode|field⟩|² for unit-power `mode` and `field` of at most unit power.
pub fn coupling_efficiency(field: &ComplexField, mode: &ComplexField) -> Result<f64> {
    let (pf, pm) = (field.power(), mode.power());
    if (pm - 1.0).abs() > 1e-6 || pf > 1.0 + 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "coupling needs unit-power modes (mode {pm}, field {pf})"
        )));
    }
    Ok(mode.inner(field)?.norm_sqr())
}

/// arg(Σ_k w_k·f_k) plus the carrier, wrapped.
pub fn multiplex_hologram(spots: &[SpotSpec], grid: &OpticalGrid, carrier: (f64, f64)) -> Result<PhaseMask> {
    if spots.is_empty() {
        return Err(Error::InvalidParameter("at least one spot is required".into()));
    }
    let max = spots.iter().map(|s| s.weight.norm()).fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::AllZeroWeights);
    }
    let modes = spots
        .iter()
        .map(|s| plane_wave_mode(s, grid))
        .collect::<Result<Vec<_>>>()?;
    let terms: Vec<(C64, &ComplexField)> = spots.iter().zip(&modes).map(|(s, m)| (s.weight / max, m)).collect();
    let field = ComplexField::combination(&terms)?;
    let phase = field.data.iter().map(|v| v.arg()).collect();
    Ok(PhaseMask::new(*grid, phase, (0.0, 0.0))?.with_carrier(carrier))
}

/// Power delivered to each spot: the far field integrated over a disc of
/// radius 2·w_focal around the spot (shifted by the carrier).
pub fn spot_powers(mask: &PhaseMask, positions: &[(f64, f64)]) -> Result<Vec<f64>> {
    let field = far_field(mask)?;
    let shift = mask.carrier_shift();
    let radius = 2.0 * mask.grid.focal_waist();
    Ok(positions
        .iter()
        .map(|p| field.power_within((p.0 + shift.0, p.1 + shift.1), radius))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceOptions {
    /// Largest accepted relative deviation of a spot's power share.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            tolerance: 0.01,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedHologram {
    pub mask: PhaseMask,
    /// Spots with the adjusted weights.
    pub spots: Vec<SpotSpec>,
    pub powers: Vec<f64>,
    /// max_k |share_k/target_k − 1| after the last iteration.
    pub imbalance: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Rescales |w_k| until each spot receives the power share |w_k|²/Σ|w|² of
/// the requested weights; phase-only encoding otherwise exaggerates ratios.
pub fn balance_spots(
    spots: &[SpotSpec],
    grid: &OpticalGrid,
    carrier: (f64, f64),
    opts: &BalanceOptions,
) -> Result<BalancedHologram> {
    let targets: Vec<f64> = spots.iter().map(|s| s.weight.norm_sqr()).collect();
    let total: f64 = targets.iter().sum();
    if !(total > 0.0) {
        return Err(Error::AllZeroWeights);
    }
    let targets: Vec<f64> = targets.iter().map(|t| t / total).collect();
    let positions: Vec<(f64, f64)> = spots.iter().map(|s| s.position).collect();
    let mut current = spots.to_vec();
    let mut iterations = 0;
    loop {
        let mask = multiplex_hologram(&current, grid, carrier)?;
        let powers = spot_powers(&mask, &positions)?;
        let sum: f64 = powers.iter().sum();
        let ratios: Vec<f64> = powers.iter().zip(&targets).map(|(p, t)| p / sum / t).collect();
        let imbalance = ratios
            .iter()
            .zip(&targets)
            .filter(|(_, t)| **t > 0.0)
            .map(|(r, _)| (r - 1.0).abs())
            .fold(0.0, f64::max);
        let converged = imbalance < opts.tolerance;
        if converged || iterations >= opts.max_iterations {
            return Ok(BalancedHologram {
                mask,
                spots: current,
                powers,
                imbalance,
                iterations,
                converged,
            });
        }
        iterations += 1;
        for (s, r) in current.iter_mut().zip(&ratios) {
            if *r > 0.0 && r.is_finite() {
                // phase-only encoding raises power to roughly the 3rd-4th
                // power of the amplitude weight, so damp the correction
                s.weight *= r.powf(-0.3);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub max_iterations: usize,
    /// Stop once the mean coupling improves by less than this.
    pub tolerance: f64,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavefrontMatch {
    pub mask: PhaseMask,
    /// |⟨target_m| e^{iφ} input_m⟩|² per mode pair.
    pub couplings: Vec<f64>,
    /// Mean coupling after each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Single-layer wavefront matching on the mask plane.
///
/// `targets` are the output modes already back-propagated to the mask plane.
/// The first iteration takes φ = arg Σ_m target_m·conj(input_m); later ones
/// weight each pair by its current overlap c_m, φ = arg Σ_m c_m·target_m·
/// conj(input_m), which cannot decrease Σ|c_m|².
pub fn wavefront_match(inputs: &[ComplexField], targets: &[ComplexField], opts: &MatchOptions) -> Result<WavefrontMatch> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::InvalidParameter(
            "wavefront matching needs equal, non-empty lists of inputs and targets".into(),
        ));
    }
    let grid = inputs[0].grid;
    for f in inputs.iter().chain(targets) {
        if f.grid != grid || f.plane != Plane::Mask {
            return Err(Error::GridMismatch);
        }
    }
    let area = {
        let (px, py) = grid.pixel(Plane::Mask);
        px * py
    };
    // a_m = conj(t_m)·in_m, so c_m = Σ a_m e^{iφ} dA
    let products: Vec<Vec<C64>> = inputs
        .iter()
        .zip(targets)
        .map(|(i, t)| i.data.iter().zip(&t.data).map(|(a, b)| b.conj() * a).collect())
        .collect();
    let overlaps = |phase: &[C64]| -> Vec<C64> {
        products
            .iter()
            .map(|a| a.iter().zip(phase).map(|(a, p)| a * p).sum::<C64>() * area)
            .collect()
    };
    let update = |weights: &[C64], previous: &[C64]| -> Vec<C64> {
        (0..grid.len())
            .into_par_iter()
            .map(|x| {
                let s: C64 = products.iter().zip(weights).map(|(a, c)| c * a[x].conj()).sum();
                if s.norm_sqr() > 0.0 {
                    s / s.norm()
                } else {
                    previous[x]
                }
            })
            .collect()
    };
    let mean = |c: &[C64]| c.iter().map(|v| v.norm_sqr()).sum::<f64>() / c.len() as f64;

    let ones = vec![C64::new(1.0, 0.0); grid.len()];
    let mut phase = update(&vec![C64::new(1.0, 0.0); inputs.len()], &ones);
    let mut c = overlaps(&phase);
    let mut history = vec![mean(&c)];
    let mut converged = false;
    while history.len() < opts.max_iterations {
        let next = update(&c, &phase);
        let c_next = overlaps(&next);
        let (old, new) = (history[history.len() - 1], mean(&c_next));
        if new < old - 1e-12 * old.max(1e-300) {
            history.push(new);
            return Err(Error::Stall {
                iteration: history.len(),
                history,
            });
        }
        phase = next;
        c = c_next;
        history.push(new);
        if new - old < opts.tolerance {
            converged = true;
            break;
        }
    }
    let mask = PhaseMask::new(grid, phase.iter().map(|p| p.arg()).collect(), (0.0, 0.0))?;
    Ok(WavefrontMatch {
        mask,
        couplings: c.iter().map(|v| v.norm_sqr()).collect(),
        iterations: history.len(),
        history,
        converged,
    })
}

/// M_ij = ⟨output_i| propagate(mask · input_j)⟩ for mask-plane inputs and
/// focal-plane outputs.
pub fn realized_transfer_matrix(
    mask: &PhaseMask,
    inputs: [&ComplexField; 2],
    outputs: [&ComplexField; 2],
) -> Result<TransferMatrix> {
    let mut m = [[C64::new(0.0, 0.0); 2]; 2];
    for (j, input) in inputs.iter().enumerate() {
        let focal = propagate_lens(&apply_mask(input, mask)?);
        for (i, output) in outputs.iter().enumerate() {
            if output.plane != Plane::Focal {
                return Err(Error::GridMismatch);
            }
            m[i][j] = output.inner(&focal)?;
        }
    }
    Ok(TransferMatrix::new(m))
}

/// Two emitters imaged onto two fiber cores through one phase mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamsplitterLayout {
    /// Sample-plane emitter positions, μm.
    pub emitters: [(f64, f64); 2],
    /// Core positions in the same coordinates, μm.
    pub cores: [(f64, f64); 2],
    /// Core mode waist, μm; `None` matches the focal spot of the pupil.
    pub core_waist: Option<f64>,
}

impl BeamsplitterLayout {
    /// Emitters 7 μm apart with the cores on their perpendicular bisector.
    /// With all four points on one line the matching settles on an unbalanced
    /// splitter instead.
    pub fn standard() -> Self {
        Self {
            emitters: [(-3.5, 0.0), (3.5, 0.0)],
            cores: [(0.0, -3.5), (0.0, 3.5)],
            core_waist: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamsplitterDesign {
    pub matched: WavefrontMatch,
    pub transfer: TransferMatrix,
    pub transmission: f64,
    pub unitarity_deviation: f64,
}

/// Wavefront-matches (f₁ + f₂)/√2 → core 1 and (f₁ − f₂)/√2 → core 2 and
/// reports the realized emitter-to-core transfer matrix.
pub fn design_beamsplitter(
    grid: &OpticalGrid,
    layout: &BeamsplitterLayout,
    opts: &MatchOptions,
) -> Result<BeamsplitterDesign> {
    let one = C64::new(1.0, 0.0);
    let f: Vec<ComplexField> = layout
        .emitters
        .iter()
        .map(|r| plane_wave_mode(&SpotSpec::new(*r, one), grid))
        .collect::<Result<_>>()?;
    let waist = layout.core_waist.unwrap_or(grid.focal_waist());
    let cores: Vec<ComplexField> = layout
        .cores
        .iter()
        .map(|r| {
            grid.check_in_view(*r)?;
            gaussian_mode(*r, waist, grid, Plane::Focal)
        })
        .collect::<Result<_>>()?;
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let inputs = [
        ComplexField::combination(&[(s, &f[0]), (s, &f[1])])?,
        ComplexField::combination(&[(s, &f[0]), (-s, &f[1])])?,
    ];
    let targets: Vec<ComplexField> = cores.iter().map(back_propagate).collect();
    let matched = wavefront_match(&inputs, &targets, opts)?;
    let transfer = realized_transfer_matrix(&matched.mask, [&f[0], &f[1]], [&cores[0], &cores[1]])?;
    Ok(BeamsplitterDesign {
        transmission: transfer.transmission(),
        unitarity_deviation: transfer.unitarity_deviation(),
        transfer,
        matched,
    })
}
