//! Scenario execution and the on-disk result bundle.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::*;
use super::formats::{load_histogram, read_mask, read_text, write_mask, Table};
use crate::correlation::{convolve_irf, distinguishable_baseline, g2_model, ideal_bunching_peak, AnalyticG2Params};
use crate::dynamics::{g2_oracle, EnsembleConfig};
use crate::error::{Error, Result};
use crate::fitting::{
    fitted_curves, joint_fit, normalize_histogram, DatasetSpec, Estimate, FitResult, FitSpec,
};
use crate::holography::{
    balance_spots, design_beamsplitter, far_field, multiplex_hologram, spot_powers, BalanceOptions, MatchOptions,
    PhaseMask, Plane, SpotSpec,
};
use crate::hom::{dephasing_for_visibility, hom_g2_zero_oracle, hom_result, HomPairParams, TransferMatrix};
use crate::trace::{uniform_grid, CorrelationTrace};
use crate::units::{detuning_to_energy, energy_to_detuning};
use crate::C64;

pub const TOOL: &str = "qdinterf";

/// One plottable curve: abscissa, data and optionally error bars and model.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTrace {
    pub label: String,
    /// Name of the abscissa column, e.g. `tau_ns`.
    pub x_name: String,
    pub x: Vec<f64>,
    pub data: Vec<f64>,
    pub sigma: Option<Vec<f64>>,
    pub model: Option<Vec<f64>>,
}

impl NamedTrace {
    fn delay(label: &str, trace: &CorrelationTrace, model: Option<Vec<f64>>) -> Self {
        Self {
            label: label.to_string(),
            x_name: "tau_ns".into(),
            x: trace.tau.clone(),
            data: trace.g2.clone(),
            sigma: trace.sigma.clone(),
            model,
        }
    }

    fn residual(&self) -> Option<Vec<f64>> {
        self.model
            .as_ref()
            .map(|m| self.data.iter().zip(m).map(|(d, m)| d - m).collect())
    }

    /// Full record: x, data, [sigma], [model, residual].
    pub fn to_table(&self, seed: u64) -> Result<Table> {
        let mut cols = vec![(self.x_name.as_str(), self.x.clone()), ("data", self.data.clone())];
        if let Some(s) = &self.sigma {
            cols.push(("sigma", s.clone()));
        }
        if let (Some(m), Some(r)) = (&self.model, self.residual()) {
            cols.push(("model", m.clone()));
            cols.push(("residual", r));
        }
        Ok(Table::new(cols)?.with_meta("label", &self.label).with_meta("seed", seed))
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let x_name = table
            .columns
            .first()
            .cloned()
            .ok_or_else(|| Error::InvalidParameter("trace table has no columns".into()))?;
        let col = |n: &str| table.column(n).map(<[f64]>::to_vec);
        let data = col("data").ok_or_else(|| Error::InvalidParameter("trace table lacks a data column".into()))?;
        let label = table
            .meta
            .iter()
            .find(|(k, _)| k == "label")
            .map(|(_, v)| v.clone())
            .unwrap_or_default();
        Ok(Self {
            label,
            x: table.data[0].clone(),
            x_name,
            data,
            sigma: col("sigma"),
            model: col("model"),
        })
    }
}

/// Everything one scenario run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub version: String,
    pub config: RunConfig,
    /// Wall-clock run time, s. The only non-reproducible number.
    pub elapsed_s: f64,
    pub report: Value,
    pub traces: Vec<NamedTrace>,
    pub masks: Vec<(String, PhaseMask)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleRecord {
    tool: String,
    version: String,
    seed: u64,
    config: RunConfig,
    elapsed_s: f64,
    report: Value,
    traces: Vec<FileEntry>,
    masks: Vec<FileEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FileEntry {
    label: String,
    file: String,
}

/// Runs the configured scenario. Relative input paths resolve against
/// `base_dir`, normally the directory of the configuration file.
pub fn run_scenario(config: &RunConfig, base_dir: &Path) -> Result<ResultBundle> {
    let start = Instant::now();
    let seed = config.seed;
    let (mut report, traces, masks) = match &config.scenario {
        Scenario::SimulateG2(s) => simulate_g2(s, seed)?,
        Scenario::OracleG2(s) => oracle_g2(s)?,
        Scenario::Fit(s) => fit(s, seed, base_dir)?,
        Scenario::SingleDotFit(s) => single_dot(s, seed, base_dir)?,
        Scenario::Hologram(s) => hologram(s)?,
        Scenario::WavefrontMatch(s) => wavefront_match(s)?,
        Scenario::Hom(s) => hom(s)?,
    };
    report["scenario"] = json!(config.scenario.kind());
    report["seed"] = json!(seed);
    Ok(ResultBundle {
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        elapsed_s: start.elapsed().as_secs_f64(),
        report,
        traces,
        masks,
    })
}

type Outcome = (Value, Vec<NamedTrace>, Vec<(String, PhaseMask)>);

/// Replaces characters that are awkward in file names.
pub fn file_label(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "unnamed".into()
    } else {
        s
    }
}

fn unique_labels<'a>(labels: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for l in labels {
        if !seen.insert(file_label(l)) {
            return Err(Error::Config(format!("duplicate label '{l}'")));
        }
    }
    Ok(())
}

fn simulate_g2(s: &SimulateG2, seed: u64) -> Result<Outcome> {
    unique_labels(s.ensembles.iter().map(|e| e.label.as_str()))?;
    let tau = s.tau.points()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut traces = Vec::new();
    let mut rows = Vec::new();
    for e in &s.ensembles {
        let emitters = e.emitters()?;
        let n = emitters.len();
        let params = AnalyticG2Params::from_emitters(&emitters)?;
        let clean = g2_model(&params, &tau, s.irf_fwhm)?;
        let zero = clean.nearest(0.0);
        let trace = if s.noise > 0.0 {
            let noisy: Vec<f64> = clean
                .g2
                .iter()
                .map(|g| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (g + s.noise * z).max(0.0)
                })
                .collect();
            let data = CorrelationTrace::new(tau.clone(), noisy, Some(vec![s.noise; tau.len()]))?;
            NamedTrace::delay(&e.label, &data, Some(clean.g2))
        } else {
            NamedTrace::delay(&e.label, &clean, None)
        };
        traces.push(trace);
        rows.push(json!({
            "label": e.label,
            "n_emitters": n,
            "g2_at_zero": zero,
            "distinguishable_baseline": distinguishable_baseline(n),
            "ideal_bunching_peak": ideal_bunching_peak(n),
        }));
    }
    Ok((json!({ "irf_fwhm_ns": s.irf_fwhm, "noise": s.noise, "ensembles": rows }), traces, Vec::new()))
}

fn oracle_g2(s: &OracleG2) -> Result<Outcome> {
    unique_labels(s.ensembles.iter().map(|e| e.label.as_str()))?;
    let positive = uniform_grid(0.0, s.tau_max, s.step)?;
    let tau: Vec<f64> = positive[1..].iter().rev().map(|t| -t).chain(positive.iter().copied()).collect();
    let mut traces = Vec::new();
    let mut rows = Vec::new();
    for e in &s.ensembles {
        let emitters = e.emitters()?;
        let ensemble = EnsembleConfig::equal_brightness(emitters.clone(), s.irf_fwhm)?;
        let half = g2_oracle(&ensemble, &positive)?;
        // the common-mode autocorrelation is even in τ
        let full: Vec<f64> = half.g2[1..].iter().rev().chain(half.g2.iter()).copied().collect();
        let mut oracle = CorrelationTrace::new(tau.clone(), full, None)?;
        if s.irf_fwhm > 0.0 {
            oracle = convolve_irf(&oracle, s.irf_fwhm)?;
        }
        let analytic = g2_model(&AnalyticG2Params::from_emitters(&emitters)?, &tau, s.irf_fwhm)?;
        let deviation = oracle.g2.iter().zip(&analytic.g2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        rows.push(json!({
            "label": e.label,
            "n_emitters": emitters.len(),
            "g2_at_zero": oracle.nearest(0.0),
            "max_deviation_from_analytic": deviation,
        }));
        traces.push(NamedTrace::delay(&e.label, &oracle, Some(analytic.g2)));
    }
    Ok((json!({ "irf_fwhm_ns": s.irf_fwhm, "ensembles": rows }), traces, Vec::new()))
}

fn estimate_uev(e: &Estimate) -> Value {
    let k = detuning_to_energy(1.0);
    json!({ "name": e.name, "value": e.value * k, "stderr": e.stderr * k, "at_bound": e.at_bound })
}

fn fit_traces(spec: &FitSpec, result: &FitResult) -> Result<Vec<NamedTrace>> {
    let curves = fitted_curves(spec, result)?;
    Ok(spec
        .datasets
        .iter()
        .zip(curves)
        .map(|(d, c)| NamedTrace::delay(&d.label, &d.trace, Some(c)))
        .collect())
}

fn fit_report(result: &FitResult) -> Result<Value> {
    let offsets: Vec<Value> = result
        .datasets
        .iter()
        .map(|d| json!({ "label": d.label, "offsets_uev": d.offsets.iter().map(estimate_uev).collect::<Vec<_>>() }))
        .collect();
    Ok(json!({
        "gamma_d": result.gamma_d.value,
        "gamma_d_stderr": result.gamma_d.stderr,
        "detunings_uev": offsets,
        "fit": serde_json::to_value(result)?,
    }))
}

fn normalized(path: &Path, base_dir: &Path, window: [f64; 2]) -> Result<CorrelationTrace> {
    normalize_histogram(&load_histogram(&base_dir.join(path))?, (window[0], window[1]))
}

fn fit(s: &FitScenario, seed: u64, base_dir: &Path) -> Result<Outcome> {
    unique_labels(s.datasets.iter().map(|d| d.label.as_str()))?;
    let per_uev = energy_to_detuning(1.0);
    let mut datasets = Vec::new();
    for d in &s.datasets {
        let mut ds = DatasetSpec::new(d.label.clone(), normalized(&d.histogram, base_dir, s.window)?, d.n_emitters);
        if let Some(offsets) = &d.offsets_uev {
            if offsets.len() + 1 != d.n_emitters {
                return Err(Error::Config(format!(
                    "dataset '{}': {} emitters need {} offsets",
                    d.label,
                    d.n_emitters,
                    d.n_emitters.saturating_sub(1)
                )));
            }
            ds.offsets = offsets
                .iter()
                .map(|p| p.scaled(per_uev).to_param(&d.label))
                .collect::<Result<_>>()?;
        }
        datasets.push(ds);
    }
    let mut spec = FitSpec::new(datasets, s.rate_sum.value, s.irf_fwhm);
    spec.gamma_d = s.gamma_d.to_param("gamma_d")?;
    spec.rate_sum = s.rate_sum.to_param("rate_sum")?;
    spec.n_starts = s.n_starts;
    spec.bootstrap_resamples = s.bootstrap_resamples;
    spec.seed = seed;
    let result = joint_fit(&spec)?;
    Ok((fit_report(&result)?, fit_traces(&spec, &result)?, Vec::new()))
}

fn single_dot(s: &SingleDotFitScenario, seed: u64, base_dir: &Path) -> Result<Outcome> {
    let trace = normalized(&s.histogram, base_dir, s.window)?;
    let mut spec = FitSpec::new(vec![DatasetSpec::new("single", trace, 1)], s.rate_sum.value, s.irf_fwhm);
    spec.rate_sum = s.rate_sum.to_param("rate_sum")?;
    spec.gamma_d = crate::fitting::Param::fixed(0.0);
    spec.seed = seed;
    let result = joint_fit(&spec)?;
    let report = json!({
        "rate_sum": result.rate_sum.value,
        "rate_sum_stderr": result.rate_sum.stderr,
        "fit": serde_json::to_value(&result)?,
    });
    Ok((report, fit_traces(&spec, &result)?, Vec::new()))
}

fn hologram(s: &HologramScenario) -> Result<Outcome> {
    let grid = s.grid.build()?;
    let spots: Vec<SpotSpec> = s
        .spots
        .iter()
        .map(|p| SpotSpec::new((p.x, p.y), C64::from_polar(p.weight, p.phase)))
        .collect();
    let carrier = (s.carrier[0], s.carrier[1]);
    let positions: Vec<(f64, f64)> = spots.iter().map(|p| p.position).collect();
    let (mask, powers, balance) = if s.balance {
        let opts = BalanceOptions {
            tolerance: s.tolerance,
            max_iterations: s.max_iterations,
        };
        let b = balance_spots(&spots, &grid, carrier, &opts)?;
        let info = json!({ "imbalance": b.imbalance, "iterations": b.iterations, "converged": b.converged });
        (b.mask, b.powers, info)
    } else {
        let mask = multiplex_hologram(&spots, &grid, carrier)?;
        let powers = spot_powers(&mask, &positions)?;
        (mask, powers, Value::Null)
    };
    let field = far_field(&mask)?;
    let shift = mask.carrier_shift();
    let pixel = grid.pixel(Plane::Focal).0;
    let radius = 2.0 * grid.focal_waist();
    let total: f64 = powers.iter().sum();
    let requested: f64 = spots.iter().map(|s| s.weight.norm_sqr()).sum();
    let mut rows = Vec::new();
    for (spot, power) in spots.iter().zip(&powers) {
        let target = (spot.position.0 + shift.0, spot.position.1 + shift.1);
        let peak = field.peak_near(target, radius).unwrap_or(target);
        let offset = ((peak.0 - target.0).powi(2) + (peak.1 - target.1).powi(2)).sqrt() / pixel;
        rows.push(json!({
            "position_um": [spot.position.0, spot.position.1],
            "peak_um": [peak.0, peak.1],
            "peak_offset_px": offset,
            "power": power,
            "share": power / total,
            "requested_share": spot.weight.norm_sqr() / requested,
        }));
    }
    // intensity along the focal row through the first spot
    let first = spots[0].position;
    let (_, iy) = grid.index_of(Plane::Focal, (first.0 + shift.0, first.1 + shift.1));
    let iy = (iy.round().max(0.0) as usize).min(grid.ny - 1);
    let intensity = field.intensity();
    let cut = NamedTrace {
        label: "focal_row".into(),
        x_name: "x_um".into(),
        x: (0..grid.nx).map(|ix| grid.coordinate(Plane::Focal, ix, iy).0).collect(),
        data: intensity[iy * grid.nx..(iy + 1) * grid.nx].to_vec(),
        sigma: None,
        model: None,
    };
    let report = json!({
        "grid": grid,
        "focal_pixel_um": pixel,
        "focal_waist_um": grid.focal_waist(),
        "spots": rows,
        "efficiency": total / field.power(),
        "far_field_power": field.power(),
        "balance": balance,
    });
    Ok((report, vec![cut], vec![("hologram".into(), mask)]))
}

fn transfer_json(t: &TransferMatrix) -> Value {
    json!(t.m.iter().map(|row| row.iter().map(|v| [v.re, v.im]).collect::<Vec<_>>()).collect::<Vec<_>>())
}

fn wavefront_match(s: &WavefrontMatchScenario) -> Result<Outcome> {
    let grid = s.grid.build()?;
    let opts = MatchOptions {
        max_iterations: s.max_iterations,
        tolerance: s.tolerance,
    };
    let d = design_beamsplitter(&grid, &s.layout, &opts)?;
    let history = NamedTrace {
        label: "coupling_history".into(),
        x_name: "iteration".into(),
        x: (0..d.matched.history.len()).map(|i| i as f64).collect(),
        data: d.matched.history.clone(),
        sigma: None,
        model: None,
    };
    let report = json!({
        "grid": grid,
        "layout": s.layout,
        "transfer": transfer_json(&d.transfer),
        "splitting": d.transfer.splitting(),
        "transmission": d.transmission,
        "unitarity_deviation": d.unitarity_deviation,
        "couplings": d.matched.couplings,
        "iterations": d.matched.iterations,
        "converged": d.matched.converged,
    });
    Ok((report, vec![history], vec![("beamsplitter".into(), d.matched.mask)]))
}

fn hom(s: &HomScenario) -> Result<Outcome> {
    let emitters = [0, 1].map(|k| {
        crate::dynamics::EmitterParams::new(0.0, s.emitters[k].gamma, 0.0, s.emitters[k].gamma_d)
    });
    let [a, b] = emitters;
    let transfer = match &s.transfer {
        None => TransferMatrix::ideal(),
        Some(m) => TransferMatrix::new(m.map(|row| row.map(|v| C64::new(v[0], v[1])))),
    };
    let pair = HomPairParams::new([a?, b?], s.detuning_uev, s.period, transfer)?;
    let tau = s.tau.points()?;
    let result = hom_result(&pair, &tau)?;
    let target = match s.target_visibility {
        Some(v) => Some(dephasing_for_visibility(&pair, v)?),
        None => None,
    };
    let report = json!({
        "g2_zero": result.g2_zero,
        "g2_zero_distinguishable": result.g2_distinguishable,
        "g2_zero_master_equation": hom_g2_zero_oracle(&pair)?,
        "visibility": result.visibility,
        "transfer": transfer_json(&pair.transfer),
        "gamma_d_for_target_visibility": target,
        "warnings": result.warnings,
    });
    Ok((report, vec![NamedTrace::delay("coincidences", &result.density, None)], Vec::new()))
}

fn json_text(v: &impl Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Writes `bundle.json`, `report.json`, one `trace_<label>.tsv` per trace and
/// the mask files. `report.json` and every data file are reproducible; the
/// bundle also records the run time.
pub fn write_bundle(bundle: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let seed = bundle.config.seed;
    let mut written = Vec::new();
    let mut traces = Vec::new();
    for t in &bundle.traces {
        let file = format!("trace_{}.tsv", file_label(&t.label));
        t.to_table(seed)?.write(&dir.join(&file))?;
        written.push(dir.join(&file));
        traces.push(FileEntry {
            label: t.label.clone(),
            file,
        });
    }
    let mut masks = Vec::new();
    for (label, mask) in &bundle.masks {
        let stem = format!("mask_{}", file_label(label));
        written.extend(write_mask(dir, &stem, mask, seed)?);
        masks.push(FileEntry {
            label: label.clone(),
            file: format!("{stem}.json"),
        });
    }
    fs::write(dir.join("report.json"), json_text(&bundle.report)?)?;
    written.push(dir.join("report.json"));
    let record = BundleRecord {
        tool: TOOL.into(),
        version: bundle.version.clone(),
        seed,
        config: bundle.config.clone(),
        elapsed_s: bundle.elapsed_s,
        report: bundle.report.clone(),
        traces,
        masks,
    };
    fs::write(dir.join("bundle.json"), json_text(&record)?)?;
    written.push(dir.join("bundle.json"));
    Ok(written)
}

pub fn load_bundle(dir: &Path) -> Result<ResultBundle> {
    let record: BundleRecord = serde_json::from_str(&read_text(&dir.join("bundle.json"))?)?;
    let traces = record
        .traces
        .iter()
        .map(|e| NamedTrace::from_table(&Table::read(&dir.join(&e.file))?))
        .collect::<Result<_>>()?;
    let masks = record
        .masks
        .iter()
        .map(|e| Ok((e.label.clone(), read_mask(&dir.join(&e.file))?.0)))
        .collect::<Result<_>>()?;
    Ok(ResultBundle {
        version: record.version,
        config: record.config,
        elapsed_s: record.elapsed_s,
        report: record.report,
        traces,
        masks,
    })
}

/// One `plot_<label>.tsv` per trace with columns x, data and, where a model
/// exists, model and residual.
pub fn emit_plotdata(bundle: &ResultBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    if bundle.traces.is_empty() {
        return Err(Error::InvalidParameter("bundle holds no traces".into()));
    }
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for t in &bundle.traces {
        let mut cols = vec![(t.x_name.as_str(), t.x.clone()), ("data", t.data.clone())];
        if let (Some(m), Some(r)) = (&t.model, t.residual()) {
            cols.push(("model", m.clone()));
            cols.push(("residual", r));
        }
        let table = Table::new(cols)?
            .with_meta("label", &t.label)
            .with_meta("seed", bundle.config.seed);
        let path = dir.join(format!("plot_{}.tsv", file_label(&t.label)));
        table.write(&path)?;
        out.push(path);
    }
    Ok(out)
}
