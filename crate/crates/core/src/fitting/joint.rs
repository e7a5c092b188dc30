use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::beat::beat_frequency_estimate;
use super::model::ModelGrid;
use nalgebra::DMatrix;

use super::optimize::{
    difference_points, levenberg_marquardt_with_jacobian, nelder_mead, LevenbergMarquardtOptions, NelderMeadOptions,
};
use super::sobol::Sobol;
use super::uncertainty::{bootstrap_errors, curvature_errors};
use crate::correlation::AnalyticG2Params;
use crate::error::{Error, Result};
use crate::trace::CorrelationTrace;

/// Starts 1..=BEAT_STARTS take their detunings from the beat estimate.
const BEAT_STARTS: usize = 8;

/// A fit parameter with its box constraint. Fixed parameters keep `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    #[serde(default)]
    pub fixed: bool,
}

impl Param {
    pub fn free(value: f64, lower: f64, upper: f64) -> Self {
        Self {
            value,
            lower,
            upper,
            fixed: false,
        }
    }

    pub fn fixed(value: f64) -> Self {
        Self {
            value,
            lower: value,
            upper: value,
            fixed: true,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::InvalidParameter(format!("{name}: value must be finite")));
        }
        if self.fixed {
            return Ok(());
        }
        if !self.lower.is_finite() || !self.upper.is_finite() || !(self.upper > self.lower) {
            return Err(Error::InvalidParameter(format!(
                "{name}: free parameters need finite bounds with lower < upper"
            )));
        }
        if self.value < self.lower || self.value > self.upper {
            return Err(Error::InvalidParameter(format!(
                "{name}: initial value {} outside [{}, {}]",
                self.value, self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// One normalized trace and the per-dataset parameters of its model
/// a·(K ⊗ g²)(τ) + c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub label: String,
    pub trace: CorrelationTrace,
    pub n_emitters: usize,
    /// ω_k − ω_1 in rad/ns for k = 2..N.
    pub offsets: Vec<Param>,
    pub amplitude: Param,
    pub background: Param,
}

impl DatasetSpec {
    /// Dataset with free amplitude and background and free offsets. Two-emitter
    /// offsets are restricted to ≥ 0 since g² is even in the detuning.
    pub fn new(label: impl Into<String>, trace: CorrelationTrace, n_emitters: usize) -> Self {
        let offset = if n_emitters == 2 {
            Param::free(1.0, 0.0, 100.0)
        } else {
            Param::free(1.0, -100.0, 100.0)
        };
        Self {
            label: label.into(),
            trace,
            n_emitters,
            offsets: vec![offset; n_emitters.saturating_sub(1)],
            amplitude: Param::free(1.0, 0.1, 10.0),
            background: Param::free(0.0, -1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub datasets: Vec<DatasetSpec>,
    /// Pure dephasing rate shared by all emitters and datasets, ns⁻¹.
    pub gamma_d: Param,
    /// γ + γ_p shared by all emitters, ns⁻¹; normally fixed.
    pub rate_sum: Param,
    pub irf_fwhm: f64,
    pub n_starts: usize,
    pub seed: u64,
    pub bootstrap_resamples: usize,
    /// Also report bootstrap errors when the curvature matrix is regular.
    #[serde(default)]
    pub bootstrap_crosscheck: bool,
}

impl FitSpec {
    pub fn new(datasets: Vec<DatasetSpec>, rate_sum: f64, irf_fwhm: f64) -> Self {
        Self {
            datasets,
            gamma_d: Param::free(1.0, 0.0, 20.0),
            rate_sum: Param::fixed(rate_sum),
            irf_fwhm,
            n_starts: 16,
            seed: 0,
            bootstrap_resamples: 100,
            bootstrap_crosscheck: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    /// From the curvature of χ² (or the bootstrap when that is singular).
    pub stderr: f64,
    /// `stderr` scaled by sqrt(reduced χ²).
    pub stderr_scaled: f64,
    pub stderr_bootstrap: Option<f64>,
    pub fixed: bool,
    pub at_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub label: String,
    pub n_emitters: usize,
    pub offsets: Vec<Estimate>,
    pub amplitude: Estimate,
    pub background: Estimate,
    pub chi2: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartReport {
    pub index: usize,
    pub chi2: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMethod {
    Curvature,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub gamma_d: Estimate,
    pub rate_sum: Estimate,
    pub datasets: Vec<DatasetResult>,
    pub chi2: f64,
    pub reduced_chi2: f64,
    pub dof: usize,
    pub n_free: usize,
    pub error_method: ErrorMethod,
    pub starts: Vec<StartReport>,
    pub best_start: usize,
    pub polish_iterations: usize,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// All estimates in a flat list: shared first, then per dataset.
    pub fn parameters(&self) -> Vec<&Estimate> {
        let mut out = vec![&self.gamma_d, &self.rate_sum];
        for d in &self.datasets {
            out.extend(d.offsets.iter());
            out.push(&d.amplitude);
            out.push(&d.background);
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&Estimate> {
        self.parameters().into_iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    GammaD,
    RateSum,
    Offset(usize, usize),
    Amplitude(usize),
    Background(usize),
}

struct Resolved {
    gamma_d: f64,
    rate_sum: f64,
    offsets: Vec<Vec<f64>>,
    amplitude: Vec<f64>,
    background: Vec<f64>,
}

struct Problem<'a> {
    spec: &'a FitSpec,
    grids: Vec<ModelGrid>,
    weights: Vec<Vec<f64>>,
    nonlinear: Vec<Slot>,
    linear: Vec<Slot>,
    n_bins: usize,
}

impl<'a> Problem<'a> {
    fn new(spec: &'a FitSpec) -> Result<Self> {
        if spec.datasets.is_empty() {
            return Err(Error::InvalidParameter("no datasets to fit".into()));
        }
        if spec.n_starts == 0 {
            return Err(Error::InvalidParameter("n_starts must be >= 1".into()));
        }
        spec.gamma_d.validate("gamma_d")?;
        spec.rate_sum.validate("rate_sum")?;
        if !(spec.rate_sum.value > 0.0) || (!spec.rate_sum.fixed && !(spec.rate_sum.lower > 0.0)) {
            return Err(Error::InvalidParameter("rate_sum must be > 0".into()));
        }
        if !spec.gamma_d.fixed && spec.gamma_d.lower < 0.0 || spec.gamma_d.value < 0.0 {
            return Err(Error::InvalidParameter("gamma_d must be >= 0".into()));
        }
        let mut nonlinear = Vec::new();
        let mut linear = Vec::new();
        if !spec.gamma_d.fixed {
            nonlinear.push(Slot::GammaD);
        }
        if !spec.rate_sum.fixed {
            nonlinear.push(Slot::RateSum);
        }
        let mut grids = Vec::new();
        let mut weights = Vec::new();
        for (d, ds) in spec.datasets.iter().enumerate() {
            if ds.n_emitters == 0 || ds.n_emitters > crate::dynamics::MAX_EMITTERS {
                return Err(Error::InvalidParameter(format!(
                    "{}: emitter count must be in 1..=8",
                    ds.label
                )));
            }
            if ds.offsets.len() + 1 != ds.n_emitters {
                return Err(Error::InvalidParameter(format!(
                    "{}: {} emitters need {} offsets",
                    ds.label,
                    ds.n_emitters,
                    ds.n_emitters - 1
                )));
            }
            for (k, p) in ds.offsets.iter().enumerate() {
                p.validate(&format!("{}.delta_{}", ds.label, k + 2))?;
                if !p.fixed {
                    nonlinear.push(Slot::Offset(d, k));
                }
            }
            ds.amplitude.validate(&format!("{}.amplitude", ds.label))?;
            ds.background.validate(&format!("{}.background", ds.label))?;
            if !ds.amplitude.fixed {
                linear.push(Slot::Amplitude(d));
            }
            if !ds.background.fixed {
                linear.push(Slot::Background(d));
            }
            grids.push(ModelGrid::new(&ds.trace.tau, spec.irf_fwhm)?);
            let w: Vec<f64> = match &ds.trace.sigma {
                Some(s) => {
                    if s.iter().any(|v| *v <= 0.0) {
                        return Err(Error::DivisionByZero(format!(
                            "{}: per-bin sigma must be > 0",
                            ds.label
                        )));
                    }
                    s.iter().map(|v| 1.0 / v).collect()
                }
                None => vec![1.0; ds.trace.len()],
            };
            weights.push(w);
        }
        let n_bins = spec.datasets.iter().map(|d| d.trace.len()).sum();
        let problem = Self {
            spec,
            grids,
            weights,
            nonlinear,
            linear,
            n_bins,
        };
        if problem.n_bins <= problem.n_free() {
            return Err(Error::InvalidParameter(format!(
                "{} bins cannot constrain {} free parameters",
                problem.n_bins,
                problem.n_free()
            )));
        }
        Ok(problem)
    }

    fn n_free(&self) -> usize {
        self.nonlinear.len() + self.linear.len()
    }

    fn param(&self, slot: Slot) -> &Param {
        match slot {
            Slot::GammaD => &self.spec.gamma_d,
            Slot::RateSum => &self.spec.rate_sum,
            Slot::Offset(d, k) => &self.spec.datasets[d].offsets[k],
            Slot::Amplitude(d) => &self.spec.datasets[d].amplitude,
            Slot::Background(d) => &self.spec.datasets[d].background,
        }
    }

    fn slots(&self) -> impl Iterator<Item = Slot> + '_ {
        self.nonlinear.iter().chain(&self.linear).copied()
    }

    fn name(&self, slot: Slot) -> String {
        match slot {
            Slot::GammaD => "gamma_d".into(),
            Slot::RateSum => "rate_sum".into(),
            Slot::Offset(d, k) => format!("{}.delta_{}", self.spec.datasets[d].label, k + 2),
            Slot::Amplitude(d) => format!("{}.amplitude", self.spec.datasets[d].label),
            Slot::Background(d) => format!("{}.background", self.spec.datasets[d].label),
        }
    }

    fn bounds(&self, slots: &[Slot]) -> (Vec<f64>, Vec<f64>) {
        slots
            .iter()
            .map(|s| {
                let p = self.param(*s);
                (p.lower, p.upper)
            })
            .unzip()
    }

    fn resolve(&self, x: &[f64]) -> Resolved {
        let spec = self.spec;
        let mut r = Resolved {
            gamma_d: spec.gamma_d.value,
            rate_sum: spec.rate_sum.value,
            offsets: spec
                .datasets
                .iter()
                .map(|d| d.offsets.iter().map(|p| p.value).collect())
                .collect(),
            amplitude: spec.datasets.iter().map(|d| d.amplitude.value).collect(),
            background: spec.datasets.iter().map(|d| d.background.value).collect(),
        };
        for (slot, v) in self.slots().zip(x) {
            match slot {
                Slot::GammaD => r.gamma_d = *v,
                Slot::RateSum => r.rate_sum = *v,
                Slot::Offset(d, k) => r.offsets[d][k] = *v,
                Slot::Amplitude(d) => r.amplitude[d] = *v,
                Slot::Background(d) => r.background[d] = *v,
            }
        }
        r
    }

    fn shape(&self, d: usize, r: &Resolved, out: &mut [f64]) {
        let n = self.spec.datasets[d].n_emitters;
        let mut omega = vec![0.0];
        omega.extend(&r.offsets[d]);
        match AnalyticG2Params::from_parts(&vec![r.rate_sum; n], &vec![r.gamma_d; n], &omega) {
            Ok(p) => self.grids[d].evaluate(&p, out),
            Err(_) => out.fill(f64::NAN),
        }
    }

    /// Best amplitude and background for a fixed model shape.
    fn solve_linear(&self, d: usize, shape: &[f64], y: &[f64]) -> (f64, f64) {
        let ds = &self.spec.datasets[d];
        let (mut a, mut c) = (ds.amplitude.value, ds.background.value);
        let (fa, fc) = (ds.amplitude.fixed, ds.background.fixed);
        let (mut sw, mut sm, mut smm, mut sy, mut smy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((m, y), w) in shape.iter().zip(y).zip(&self.weights[d]) {
            let w2 = w * w;
            sw += w2;
            sm += w2 * m;
            smm += w2 * m * m;
            sy += w2 * y;
            smy += w2 * m * y;
        }
        let a_given_c = |c: f64| if smm > 0.0 { (smy - c * sm) / smm } else { ds.amplitude.value };
        let c_given_a = |a: f64| (sy - a * sm) / sw;
        let clamp_a = |v: f64| v.clamp(ds.amplitude.lower, ds.amplitude.upper);
        let clamp_c = |v: f64| v.clamp(ds.background.lower, ds.background.upper);
        match (fa, fc) {
            (true, true) => {}
            (false, true) => a = clamp_a(a_given_c(c)),
            (true, false) => c = clamp_c(c_given_a(a)),
            (false, false) => {
                let det = sw * smm - sm * sm;
                if det > 1e-12 * sw * smm {
                    a = (sw * smy - sm * sy) / det;
                    c = (sy - a * sm) / sw;
                } else {
                    c = c_given_a(a);
                }
                if a != clamp_a(a) {
                    a = clamp_a(a);
                    c = clamp_c(c_given_a(a));
                } else if c != clamp_c(c) {
                    c = clamp_c(c);
                    a = clamp_a(a_given_c(c));
                }
            }
        }
        (a, c)
    }

    fn dataset_chi2(&self, d: usize, shape: &[f64], y: &[f64], a: f64, c: f64) -> f64 {
        shape
            .iter()
            .zip(y)
            .zip(&self.weights[d])
            .map(|((m, y), w)| ((y - a * m - c) * w).powi(2))
            .sum()
    }

    /// χ² minimized over the linear parameters, and the full vector.
    fn profile(&self, nonlinear: &[f64], data: &[&[f64]]) -> (f64, Vec<f64>) {
        let mut x = nonlinear.to_vec();
        x.extend(self.linear.iter().map(|s| self.param(*s).value));
        let r = self.resolve(&x);
        let mut total = 0.0;
        let mut lin = Vec::with_capacity(self.spec.datasets.len());
        for (d, y) in data.iter().enumerate() {
            let mut shape = vec![0.0; y.len()];
            self.shape(d, &r, &mut shape);
            let (a, c) = self.solve_linear(d, &shape, y);
            total += self.dataset_chi2(d, &shape, y, a, c);
            lin.push((a, c));
        }
        let nl = self.nonlinear.len();
        for (i, slot) in self.linear.iter().enumerate() {
            x[nl + i] = match slot {
                Slot::Amplitude(d) => lin[*d].0,
                Slot::Background(d) => lin[*d].1,
                _ => unreachable!(),
            };
        }
        (if total.is_nan() { f64::INFINITY } else { total }, x)
    }

    fn residuals(&self, x: &[f64], data: &[&[f64]], out: &mut [f64]) {
        let r = self.resolve(x);
        let mut offset = 0;
        for (d, y) in data.iter().enumerate() {
            let n = y.len();
            let seg = &mut out[offset..offset + n];
            self.shape(d, &r, seg);
            let (a, c) = (r.amplitude[d], r.background[d]);
            for ((s, y), w) in seg.iter_mut().zip(*y).zip(&self.weights[d]) {
                *s = (y - a * *s - c) * w;
            }
            offset += n;
        }
    }

    /// Jacobian of `residuals`. Amplitude and background columns are exact,
    /// and an offset only touches the rows of its own dataset.
    fn jacobian(&self, x: &[f64], data: &[&[f64]]) -> DMatrix<f64> {
        let slots: Vec<Slot> = self.slots().collect();
        let (lower, upper) = self.bounds(&slots);
        let r = self.resolve(x);
        let starts: Vec<usize> = data
            .iter()
            .scan(0, |o, y| {
                let start = *o;
                *o += y.len();
                Some(start)
            })
            .collect();
        let mut jac = DMatrix::zeros(self.n_bins, x.len());
        let mut base = Vec::new();
        let (mut sp, mut sm) = (Vec::new(), Vec::new());
        for (j, slot) in slots.iter().enumerate() {
            let touched: Vec<usize> = match slot {
                Slot::GammaD | Slot::RateSum => (0..data.len()).collect(),
                Slot::Offset(d, _) | Slot::Amplitude(d) | Slot::Background(d) => vec![*d],
            };
            for d in touched {
                let n = data[d].len();
                let w = &self.weights[d];
                let mut col = jac.column_mut(j);
                let rows = starts[d]..starts[d] + n;
                match slot {
                    Slot::Amplitude(_) => {
                        base.resize(n, 0.0);
                        self.shape(d, &r, &mut base);
                        for (i, row) in rows.enumerate() {
                            col[row] = -base[i] * w[i];
                        }
                    }
                    Slot::Background(_) => {
                        for (i, row) in rows.enumerate() {
                            col[row] = -w[i];
                        }
                    }
                    _ => {
                        let (lo, hi) = difference_points(x[j], lower[j], upper[j]);
                        let mut xp = x.to_vec();
                        sp.resize(n, 0.0);
                        sm.resize(n, 0.0);
                        xp[j] = hi;
                        self.shape(d, &self.resolve(&xp), &mut sp);
                        xp[j] = lo;
                        self.shape(d, &self.resolve(&xp), &mut sm);
                        let scale = -r.amplitude[d] / (hi - lo);
                        for (i, row) in rows.enumerate() {
                            col[row] = scale * (sp[i] - sm[i]) * w[i];
                        }
                    }
                }
            }
        }
        jac
    }

    fn model(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let r = self.resolve(x);
        (0..self.spec.datasets.len())
            .map(|d| {
                let mut s = vec![0.0; self.grids[d].len()];
                self.shape(d, &r, &mut s);
                s.iter().map(|v| r.amplitude[d] * v + r.background[d]).collect()
            })
            .collect()
    }

    fn start_points(&self) -> Vec<Vec<f64>> {
        let (lower, upper) = self.bounds(&self.nonlinear);
        let initial: Vec<f64> = self.nonlinear.iter().map(|s| self.param(*s).value).collect();
        let beats: Vec<(usize, f64)> = self
            .nonlinear
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                Slot::Offset(d, 0) if self.spec.datasets[*d].n_emitters == 2 => {
                    beat_frequency_estimate(&self.spec.datasets[*d].trace)
                        .filter(|w| *w >= lower[i] && *w <= upper[i])
                        .map(|w| (i, w))
                }
                _ => None,
            })
            .collect();
        let apply_beats = |mut p: Vec<f64>| {
            for (i, w) in &beats {
                p[*i] = *w;
            }
            p
        };
        let mut sobol = Sobol::scrambled(self.nonlinear.len(), self.spec.seed);
        let mut starts = vec![apply_beats(initial)];
        for k in 1..self.spec.n_starts {
            let u = sobol.next_point();
            let p: Vec<f64> = u
                .iter()
                .zip(lower.iter().zip(&upper))
                .map(|(u, (lo, hi))| lo + u * (hi - lo))
                .collect();
            starts.push(if k <= BEAT_STARTS { apply_beats(p) } else { p });
        }
        starts
    }
}

fn estimate(name: String, p: &Param, value: f64, stderr: f64, scale: f64) -> Estimate {
    let width = p.upper - p.lower;
    let at_bound = !p.fixed && ((value - p.lower).abs() <= 1e-6 * width || (p.upper - value).abs() <= 1e-6 * width);
    Estimate {
        name,
        value,
        stderr,
        stderr_scaled: stderr * scale,
        stderr_bootstrap: None,
        fixed: p.fixed,
        at_bound,
    }
}

/// Minimizes the total χ² of all datasets with shared γ_d (and γ+γ_p) and
/// per-dataset detunings, amplitudes and backgrounds.
///
/// Deterministic multi-start Nelder–Mead over the nonlinear parameters (the
/// linear ones are solved exactly at every evaluation) followed by a
/// Levenberg–Marquardt polish of the full vector.
pub fn joint_fit(spec: &FitSpec) -> Result<FitResult> {
    let problem = Problem::new(spec)?;
    let data: Vec<&[f64]> = spec.datasets.iter().map(|d| d.trace.g2.as_slice()).collect();
    let (nl_lower, nl_upper) = problem.bounds(&problem.nonlinear);
    // the starts only need to reach a basin; the polish does the rest
    let nm_opts = NelderMeadOptions {
        xtol: 1e-5,
        ftol: 1e-8,
        max_evaluations: 3000,
        ..Default::default()
    };

    let starts = problem.start_points();
    let runs: Vec<_> = starts
        .par_iter()
        .map(|x0| {
            nelder_mead(
                |x| problem.profile(x, &data).0,
                x0,
                &nl_lower,
                &nl_upper,
                &nm_opts,
            )
        })
        .collect();
    let reports: Vec<StartReport> = runs
        .iter()
        .enumerate()
        .map(|(index, m)| StartReport {
            index,
            chi2: m.value,
            evaluations: m.evaluations,
            converged: m.converged,
        })
        .collect();
    let best = (0..runs.len())
        .min_by(|a, b| runs[*a].value.total_cmp(&runs[*b].value))
        .unwrap_or(0);
    if !runs[best].value.is_finite() {
        return Err(Error::NoConvergence("no start produced a finite chi-square".into()));
    }
    let (_, x_start) = problem.profile(&runs[best].x, &data);

    let slots: Vec<Slot> = problem.slots().collect();
    let (lower, upper) = problem.bounds(&slots);
    let lm_opts = LevenbergMarquardtOptions::default();
    let polish = levenberg_marquardt_with_jacobian(
        |x: &[f64], out: &mut [f64]| problem.residuals(x, &data, out),
        |x: &[f64]| problem.jacobian(x, &data),
        &x_start,
        &lower,
        &upper,
        problem.n_bins,
        &lm_opts,
    );
    if !polish.chi2.is_finite() {
        return Err(Error::NoConvergence("polish produced a non-finite chi-square".into()));
    }
    if !polish.converged && !runs.iter().any(|r| r.converged) {
        return Err(Error::NoConvergence(format!(
            "{} starts exhausted their budgets and the polish did not converge",
            runs.len()
        )));
    }
    let x = polish.x.clone();
    let dof = problem.n_bins - problem.n_free();
    let reduced = polish.chi2 / dof as f64;
    let scale = reduced.sqrt();
    let mut warnings = Vec::new();

    let bootstrap = |x: &[f64]| -> Result<Vec<f64>> {
        let model: Vec<f64> = problem.model(x).concat();
        let sigma: Vec<f64> = problem.weights.concat().iter().map(|w| 1.0 / w).collect();
        let lens: Vec<usize> = spec.datasets.iter().map(|d| d.trace.len()).collect();
        bootstrap_errors(&model, &sigma, spec.bootstrap_resamples, spec.seed, |flat| {
            let mut parts = Vec::with_capacity(lens.len());
            let mut o = 0;
            for n in &lens {
                parts.push(&flat[o..o + n]);
                o += n;
            }
            let fit = levenberg_marquardt_with_jacobian(
                |p: &[f64], out: &mut [f64]| problem.residuals(p, &parts, out),
                |p: &[f64]| problem.jacobian(p, &parts),
                x,
                &lower,
                &upper,
                problem.n_bins,
                &lm_opts,
            );
            fit.chi2.is_finite().then_some(fit.x)
        })
    };

    let (stderr, method) = match curvature_errors(&polish.jacobian) {
        Ok(e) => (e, ErrorMethod::Curvature),
        Err(Error::SingularCurvature) => {
            warnings.push("singular curvature matrix; errors from parametric bootstrap".into());
            (bootstrap(&x)?, ErrorMethod::Bootstrap)
        }
        Err(e) => return Err(e),
    };
    let crosscheck = if spec.bootstrap_crosscheck && method == ErrorMethod::Curvature {
        Some(bootstrap(&x)?)
    } else if method == ErrorMethod::Bootstrap {
        Some(stderr.clone())
    } else {
        None
    };

    // assemble estimates
    let mut by_slot: Vec<(Slot, Estimate)> = slots
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut e = estimate(problem.name(*s), problem.param(*s), x[i], stderr[i], scale);
            e.stderr_bootstrap = crosscheck.as_ref().map(|c| c[i]);
            (*s, e)
        })
        .collect();
    let mut take = |slot: Slot, name: String, p: &Param| -> Estimate {
        match by_slot.iter().position(|(s, _)| *s == slot) {
            Some(i) => by_slot.swap_remove(i).1,
            None => estimate(name, p, p.value, 0.0, scale),
        }
    };
    let gamma_d = take(Slot::GammaD, "gamma_d".into(), &spec.gamma_d);
    let rate_sum = take(Slot::RateSum, "rate_sum".into(), &spec.rate_sum);
    let model = problem.model(&x);
    let mut datasets = Vec::new();
    for (d, ds) in spec.datasets.iter().enumerate() {
        let offsets = ds
            .offsets
            .iter()
            .enumerate()
            .map(|(k, p)| take(Slot::Offset(d, k), problem.name(Slot::Offset(d, k)), p))
            .collect();
        let amplitude = take(Slot::Amplitude(d), problem.name(Slot::Amplitude(d)), &ds.amplitude);
        let background = take(Slot::Background(d), problem.name(Slot::Background(d)), &ds.background);
        let chi2 = model[d]
            .iter()
            .zip(&ds.trace.g2)
            .zip(&problem.weights[d])
            .map(|((m, y), w)| ((y - m) * w).powi(2))
            .sum();
        datasets.push(DatasetResult {
            label: ds.label.clone(),
            n_emitters: ds.n_emitters,
            offsets,
            amplitude,
            background,
            chi2,
            n_bins: ds.trace.len(),
        });
    }
    let mut result = FitResult {
        gamma_d,
        rate_sum,
        datasets,
        chi2: polish.chi2,
        reduced_chi2: reduced,
        dof,
        n_free: problem.n_free(),
        error_method: method,
        starts: reports,
        best_start: best,
        polish_iterations: polish.iterations,
        warnings,
    };
    let at_bound: Vec<String> = result
        .parameters()
        .iter()
        .filter(|e| e.at_bound)
        .map(|e| format!("{} is at a bound", e.name))
        .collect();
    result.warnings.extend(at_bound);
    Ok(result)
}

/// Model values a·(K ⊗ g²) + c of every dataset at the fitted parameters.
pub fn fitted_curves(spec: &FitSpec, result: &FitResult) -> Result<Vec<Vec<f64>>> {
    let mut spec = spec.clone();
    spec.gamma_d = Param::fixed(result.gamma_d.value);
    spec.rate_sum = Param::fixed(result.rate_sum.value);
    for (ds, r) in spec.datasets.iter_mut().zip(&result.datasets) {
        for (p, e) in ds.offsets.iter_mut().zip(&r.offsets) {
            *p = Param::fixed(e.value);
        }
        ds.amplitude = Param::fixed(r.amplitude.value);
        ds.background = Param::fixed(r.background.value);
    }
    let grids = spec
        .datasets
        .iter()
        .map(|d| ModelGrid::new(&d.trace.tau, spec.irf_fwhm))
        .collect::<Result<Vec<_>>>()?;
    spec.datasets
        .iter()
        .zip(&grids)
        .map(|(ds, grid)| {
            let n = ds.n_emitters;
            let mut omega = vec![0.0];
            omega.extend(ds.offsets.iter().map(|p| p.value));
            let p = AnalyticG2Params::from_parts(
                &vec![spec.rate_sum.value; n],
                &vec![spec.gamma_d.value; n],
                &omega,
            )?;
            let mut out = vec![0.0; grid.len()];
            grid.evaluate(&p, &mut out);
            Ok(out
                .iter()
                .map(|v| ds.amplitude.value * v + ds.background.value)
                .collect())
        })
        .collect()
}

/// Fits 1 − e^{−(γ+γ_p)|τ|} (convolved, with amplitude and background) to a
/// single-emitter antibunching trace to obtain γ + γ_p.
pub fn single_dot_fit(trace: &CorrelationTrace, irf_fwhm: f64, rate_sum: Param) -> Result<FitResult> {
    let mut spec = FitSpec::new(vec![DatasetSpec::new("single", trace.clone(), 1)], rate_sum.value, irf_fwhm);
    spec.rate_sum = rate_sum;
    spec.gamma_d = Param::fixed(0.0);
    joint_fit(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlation::g2_model;
    use crate::trace::uniform_grid;
    use crate::units::energy_to_detuning;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(n: usize, gamma_d: f64, omega: &[f64], noise: f64, seed: u64) -> CorrelationTrace {
        let tau = uniform_grid(-3.0, 3.0, 0.0025).unwrap();
        let p = AnalyticG2Params::from_parts(&vec![1.0; n], &vec![gamma_d; n], omega).unwrap();
        let clean = g2_model(&p, &tau, 0.035).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g2 = clean
            .g2
            .iter()
            .map(|g| g + noise * Normal::new(0.0, 1.0).unwrap().sample(&mut rng))
            .collect();
        let sigma = vec![noise.max(1e-3); tau.len()];
        CorrelationTrace::new(tau, g2, Some(sigma)).unwrap()
    }

    #[test]
    fn structured_jacobian_matches_differences() {
        let a = synthetic(2, 3.0, &[0.0, 14.0], 0.01, 9);
        let b = synthetic(3, 3.0, &[0.0, -6.0, 20.0], 0.01, 10);
        let mut spec = FitSpec::new(vec![DatasetSpec::new("a", a, 2), DatasetSpec::new("b", b, 3)], 1.0, 0.035);
        spec.rate_sum = Param::free(1.1, 0.5, 2.0);
        let problem = Problem::new(&spec).unwrap();
        let data: Vec<&[f64]> = spec.datasets.iter().map(|d| d.trace.g2.as_slice()).collect();
        let slots: Vec<Slot> = problem.slots().collect();
        let (lower, upper) = problem.bounds(&slots);
        let x = vec![2.5, 1.1, 13.0, -5.0, 21.0, 1.2, 0.9, 0.05, -0.02];
        assert_eq!(x.len(), slots.len());
        let mut res = |p: &[f64], out: &mut [f64]| problem.residuals(p, &data, out);
        let generic = crate::fitting::optimize::jacobian(&mut res, &x, &lower, &upper, problem.n_bins);
        let structured = problem.jacobian(&x, &data);
        let scale = generic.amax();
        assert!((generic - structured).amax() < 1e-6 * scale);
    }

    #[test]
    fn zero_noise_recovers_exactly() {
        let w = energy_to_detuning(9.5);
        let tr = synthetic(2, 3.0, &[0.0, w], 0.0, 0);
        let spec = FitSpec::new(vec![DatasetSpec::new("a", tr, 2)], 1.0, 0.035);
        let fit = joint_fit(&spec).unwrap();
        assert!(fit.reduced_chi2 < 1e-6, "{}", fit.reduced_chi2);
        assert!((fit.gamma_d.value - 3.0).abs() < 1e-5);
        assert!((fit.datasets[0].offsets[0].value - w).abs() < 1e-5);
        assert!((fit.datasets[0].amplitude.value - 1.0).abs() < 1e-6);
        assert!(fit.datasets[0].background.value.abs() < 1e-6);
    }

    #[test]
    fn scale_equivariance() {
        let tr = synthetic(2, 3.0, &[0.0, 14.0], 0.01, 1);
        let spec = FitSpec::new(vec![DatasetSpec::new("a", tr.clone(), 2)], 1.0, 0.035);
        let base = joint_fit(&spec).unwrap();
        let mut scaled = spec.clone();
        let s: Vec<f64> = tr.sigma.as_ref().unwrap().iter().map(|v| v * 3.0).collect();
        scaled.datasets[0].trace.sigma = Some(s);
        let other = joint_fit(&scaled).unwrap();
        assert!((base.gamma_d.value - other.gamma_d.value).abs() < 1e-6);
        assert!((base.reduced_chi2 / 9.0 - other.reduced_chi2).abs() < 1e-6 * base.reduced_chi2);
    }

    #[test]
    fn fixed_shared_parameter_collapses_to_independent_fits() {
        let a = synthetic(2, 3.0, &[0.0, 14.0], 0.01, 2);
        let b = synthetic(2, 3.0, &[0.0, 22.0], 0.01, 3);
        let mut joint = FitSpec::new(
            vec![DatasetSpec::new("a", a.clone(), 2), DatasetSpec::new("b", b.clone(), 2)],
            1.0,
            0.035,
        );
        joint.gamma_d = Param::fixed(3.0);
        let j = joint_fit(&joint).unwrap();
        for (i, tr) in [a, b].into_iter().enumerate() {
            let mut single = FitSpec::new(vec![DatasetSpec::new("x", tr, 2)], 1.0, 0.035);
            single.gamma_d = Param::fixed(3.0);
            let s = joint_fit(&single).unwrap();
            let (p, q) = (&j.datasets[i], &s.datasets[0]);
            assert!((p.offsets[0].value - q.offsets[0].value).abs() < 1e-6);
            assert!((p.amplitude.value - q.amplitude.value).abs() < 1e-6);
            assert!((p.chi2 - q.chi2).abs() < 1e-6 * q.chi2);
        }
    }

    #[test]
    fn duplicated_dataset_shrinks_shared_error() {
        let tr = synthetic(2, 3.0, &[0.0, 14.0], 0.01, 4);
        let single = FitSpec::new(vec![DatasetSpec::new("a", tr.clone(), 2)], 1.0, 0.035);
        let double = FitSpec::new(
            vec![DatasetSpec::new("a", tr.clone(), 2), DatasetSpec::new("b", tr, 2)],
            1.0,
            0.035,
        );
        let (s, d) = (joint_fit(&single).unwrap(), joint_fit(&double).unwrap());
        let ratio = d.gamma_d.stderr / s.gamma_d.stderr;
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn fixing_a_fitted_value_does_not_worsen_the_fit() {
        let tr = synthetic(2, 3.0, &[0.0, 14.0], 0.01, 5);
        let spec = FitSpec::new(vec![DatasetSpec::new("a", tr, 2)], 1.0, 0.035);
        let fit = joint_fit(&spec).unwrap();
        let mut refit = spec.clone();
        refit.gamma_d = Param::fixed(fit.gamma_d.value);
        let again = joint_fit(&refit).unwrap();
        assert!(again.chi2 <= fit.chi2 * (1.0 + 1e-8));
    }

    #[test]
    fn single_dot_rate() {
        let tr = synthetic(1, 0.0, &[0.0], 0.005, 6);
        let fit = single_dot_fit(&tr, 0.035, Param::free(3.0, 0.05, 20.0)).unwrap();
        let r = &fit.rate_sum;
        assert!((r.value - 1.0).abs() < 3.0 * r.stderr + 1e-9, "{} ± {}", r.value, r.stderr);
    }

    #[test]
    fn determinism() {
        let tr = synthetic(2, 3.0, &[0.0, 14.0], 0.01, 7);
        let spec = FitSpec::new(vec![DatasetSpec::new("a", tr, 2)], 1.0, 0.035);
        assert_eq!(joint_fit(&spec).unwrap(), joint_fit(&spec).unwrap());
    }

    #[test]
    fn invalid_specs() {
        let tr = synthetic(2, 3.0, &[0.0, 14.0], 0.01, 8);
        let mut spec = FitSpec::new(vec![DatasetSpec::new("a", tr, 2)], 1.0, 0.035);
        spec.gamma_d.upper = f64::INFINITY;
        assert!(joint_fit(&spec).is_err());
        spec.gamma_d = Param::free(1.0, 0.0, 10.0);
        spec.datasets[0].offsets.clear();
        assert!(joint_fit(&spec).is_err());
    }
}
