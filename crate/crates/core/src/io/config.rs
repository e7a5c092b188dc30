//! TOML run configuration. Energies are given in μeV and rates in ns⁻¹;
//! conversion to angular frequencies happens when the scenario is built.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::EmitterParams;
use crate::error::{Error, Result};
use crate::fitting::Param;
use crate::holography::{BeamsplitterLayout, OpticalGrid};
use crate::trace::uniform_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub scenario: Scenario,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.scenario.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    SimulateG2(SimulateG2),
    OracleG2(OracleG2),
    Fit(FitScenario),
    SingleDotFit(SingleDotFitScenario),
    Hologram(HologramScenario),
    WavefrontMatch(WavefrontMatchScenario),
    Hom(HomScenario),
}

impl Scenario {
    /// The subcommand name.
    pub fn kind(&self) -> &'static str {
        match self {
            Scenario::SimulateG2(_) => "simulate-g2",
            Scenario::OracleG2(_) => "oracle-g2",
            Scenario::Fit(_) => "fit",
            Scenario::SingleDotFit(_) => "single-dot-fit",
            Scenario::Hologram(_) => "hologram",
            Scenario::WavefrontMatch(_) => "wavefront-match",
            Scenario::Hom(_) => "hom",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Scenario::SimulateG2(s) => {
                nonempty(&s.ensembles, "ensembles")?;
                s.tau.points()?;
                Ok(())
            }
            Scenario::OracleG2(s) => {
                nonempty(&s.ensembles, "ensembles")?;
                if !(s.tau_max > 0.0 && s.step > 0.0) {
                    return Err(Error::Config("tau_max and step must be > 0".into()));
                }
                Ok(())
            }
            Scenario::Fit(s) => {
                nonempty(&s.datasets, "datasets")?;
                s.gamma_d.to_param("gamma_d")?;
                s.rate_sum.to_param("rate_sum")?;
                Ok(())
            }
            Scenario::SingleDotFit(s) => s.rate_sum.to_param("rate_sum").map(|_| ()),
            Scenario::Hologram(s) => nonempty(&s.spots, "spots"),
            Scenario::WavefrontMatch(_) => Ok(()),
            Scenario::Hom(s) => s.tau.points().map(|_| ()),
        }
    }
}

fn nonempty<T>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        Err(Error::Config(format!("{what} must not be empty")))
    } else {
        Ok(())
    }
}

/// Uniform delay grid, ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        uniform_grid(self.min, self.max, self.step).map_err(|e| Error::Config(e.to_string()))
    }
}

fn default_tau() -> GridSpec {
    GridSpec {
        min: -10.0,
        max: 10.0,
        step: 0.0025,
    }
}

fn default_irf() -> f64 {
    0.035
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec {
    #[serde(default)]
    pub energy_uev: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub gamma_p: f64,
    #[serde(default)]
    pub gamma_d: f64,
}

impl EmitterSpec {
    pub fn to_params(&self) -> Result<EmitterParams> {
        EmitterParams::from_energy(self.energy_uev, self.gamma, self.gamma_p, self.gamma_d)
    }
}

/// `n` identical emitters with energies k·spacing_uev.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformEnsemble {
    pub n: usize,
    #[serde(default)]
    pub spacing_uev: f64,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub gamma_p: f64,
    #[serde(default)]
    pub gamma_d: f64,
}

/// Either an explicit emitter list or a uniform ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emitters: Option<Vec<EmitterSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<UniformEnsemble>,
}

impl EnsembleSpec {
    pub fn emitters(&self) -> Result<Vec<EmitterParams>> {
        match (&self.emitters, &self.uniform) {
            (Some(list), None) => list.iter().map(EmitterSpec::to_params).collect(),
            (None, Some(u)) => (0..u.n)
                .map(|k| EmitterParams::from_energy(k as f64 * u.spacing_uev, u.gamma, u.gamma_p, u.gamma_d))
                .collect(),
            _ => Err(Error::Config(format!(
                "ensemble '{}' needs exactly one of `emitters` and `uniform`",
                self.label
            ))),
        }
    }
}

/// Analytic common-mode g²(τ), optionally with Gaussian noise of the given
/// standard deviation drawn from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateG2 {
    pub ensembles: Vec<EnsembleSpec>,
    #[serde(default = "default_irf")]
    pub irf_fwhm: f64,
    #[serde(default = "default_tau")]
    pub tau: GridSpec,
    #[serde(default)]
    pub noise: f64,
}

/// Master-equation g²(τ) on [−tau_max, tau_max], equal-brightness weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleG2 {
    pub ensembles: Vec<EnsembleSpec>,
    #[serde(default = "default_irf")]
    pub irf_fwhm: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_tau_max() -> f64 {
    10.0
}

fn default_step() -> f64 {
    0.0025
}

/// A fit parameter. Free parameters need both bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default)]
    pub fixed: bool,
}

impl ParamSpec {
    pub fn free(value: f64, lower: f64, upper: f64) -> Self {
        Self {
            value,
            lower: Some(lower),
            upper: Some(upper),
            fixed: false,
        }
    }

    pub fn fixed(value: f64) -> Self {
        Self {
            value,
            lower: None,
            upper: None,
            fixed: true,
        }
    }

    pub fn to_param(&self, name: &str) -> Result<Param> {
        if self.fixed {
            return Ok(Param::fixed(self.value));
        }
        match (self.lower, self.upper) {
            (Some(lo), Some(hi)) if lo < hi && (lo..=hi).contains(&self.value) => Ok(Param::free(self.value, lo, hi)),
            _ => Err(Error::Config(format!(
                "{name}: a free parameter needs lower <= value <= upper with lower < upper"
            ))),
        }
    }

    /// Same parameter with value and bounds multiplied by `k` (k > 0).
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            value: self.value * k,
            lower: self.lower.map(|v| v * k),
            upper: self.upper.map(|v| v * k),
            fixed: self.fixed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitDatasetSpec {
    pub label: String,
    /// Histogram file, relative to the configuration file.
    pub histogram: PathBuf,
    pub n_emitters: usize,
    /// Detunings ħ(ω_k − ω_1) in μeV for k = 2..N; defaults are free in
    /// [0, 65] μeV for pairs and [−65, 65] μeV otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offsets_uev: Option<Vec<ParamSpec>>,
}

fn default_window() -> [f64; 2] {
    [8.0, 10.0]
}

fn default_gamma_d() -> ParamSpec {
    ParamSpec::free(1.0, 0.0, 20.0)
}

fn default_rate_sum() -> ParamSpec {
    ParamSpec::fixed(1.0)
}

fn default_starts() -> usize {
    16
}

fn default_resamples() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitScenario {
    pub datasets: Vec<FitDatasetSpec>,
    /// |τ| range, ns, whose mean count normalizes each histogram.
    #[serde(default = "default_window")]
    pub window: [f64; 2],
    #[serde(default = "default_irf")]
    pub irf_fwhm: f64,
    #[serde(default = "default_gamma_d")]
    pub gamma_d: ParamSpec,
    #[serde(default = "default_rate_sum")]
    pub rate_sum: ParamSpec,
    #[serde(default = "default_starts")]
    pub n_starts: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
}

fn default_single_rate() -> ParamSpec {
    ParamSpec::free(1.0, 0.05, 20.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleDotFitScenario {
    pub histogram: PathBuf,
    #[serde(default = "default_window")]
    pub window: [f64; 2],
    #[serde(default = "default_irf")]
    pub irf_fwhm: f64,
    #[serde(default = "default_single_rate")]
    pub rate_sum: ParamSpec,
}

/// Square modulator grid; the defaults are the standard 512² setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_pitch")]
    pub pitch_um: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength_um: f64,
    #[serde(default = "default_fov")]
    pub fov_um: f64,
}

fn default_n() -> usize {
    512
}

fn default_pitch() -> f64 {
    8.0
}

fn default_wavelength() -> f64 {
    0.97117
}

fn default_fov() -> f64 {
    30.0
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            pitch_um: default_pitch(),
            wavelength_um: default_wavelength(),
            fov_um: default_fov(),
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<OpticalGrid> {
        OpticalGrid::with_field_of_view(self.n, self.pitch_um, self.wavelength_um, self.fov_um)
    }
}

/// Focal-plane spot in μm with a complex weight weight·e^{i·phase}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpotConfig {
    pub x: f64,
    pub y: f64,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub phase: f64,
}

fn yes() -> bool {
    true
}

fn default_tolerance() -> f64 {
    0.01
}

fn default_balance_iterations() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HologramScenario {
    #[serde(default)]
    pub grid: GridConfig,
    pub spots: Vec<SpotConfig>,
    /// Carrier wavevector, rad/μm.
    #[serde(default)]
    pub carrier: [f64; 2],
    #[serde(default = "yes")]
    pub balance: bool,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_balance_iterations")]
    pub max_iterations: usize,
}

fn default_layout() -> BeamsplitterLayout {
    BeamsplitterLayout::standard()
}

fn default_match_iterations() -> usize {
    500
}

fn default_match_tolerance() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavefrontMatchScenario {
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_layout")]
    pub layout: BeamsplitterLayout,
    #[serde(default = "default_match_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_match_tolerance")]
    pub tolerance: f64,
}

/// One emitter of a pulsed pair; frequencies come from `detuning_uev`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsedEmitterSpec {
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub gamma_d: f64,
}

fn default_period() -> f64 {
    12.5
}

fn default_hom_tau() -> GridSpec {
    GridSpec {
        min: -30.0,
        max: 30.0,
        step: 0.01,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomScenario {
    pub emitters: [PulsedEmitterSpec; 2],
    #[serde(default)]
    pub detuning_uev: f64,
    #[serde(default = "default_period")]
    pub period: f64,
    /// Rows of [re, im] pairs; the ideal 50:50 splitter when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer: Option<[[[f64; 2]; 2]; 2]>,
    #[serde(default = "default_hom_tau")]
    pub tau: GridSpec,
    /// Also solve for the common γ_d giving this visibility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_visibility: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_simulate_config() {
        let c = RunConfig::parse(
            r#"
            seed = 3
            [scenario]
            kind = "simulate-g2"
            [[scenario.ensembles]]
            label = "n5"
            uniform = { n = 5, gamma_d = 3.0 }
            "#,
        )
        .unwrap();
        assert_eq!(c.scenario.kind(), "simulate-g2");
        let Scenario::SimulateG2(s) = &c.scenario else { panic!() };
        assert_eq!(s.irf_fwhm, 0.035);
        assert_eq!(s.ensembles[0].emitters().unwrap().len(), 5);
        // echo round trip
        assert_eq!(RunConfig::parse(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_kind_and_fields_are_rejected() {
        assert!(matches!(
            RunConfig::parse("[scenario]\nkind = \"teleport\"\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::parse("[scenario]\nkind = \"hologram\"\nspots = [{x = 1, y = 2}]\nbogus = 1\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::parse("seed = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn free_params_need_bounds() {
        let p = ParamSpec {
            value: 1.0,
            lower: Some(0.0),
            upper: None,
            fixed: false,
        };
        assert!(p.to_param("x").is_err());
        assert!(ParamSpec::fixed(2.0).to_param("x").unwrap().fixed);
    }

    #[test]
    fn ensemble_needs_exactly_one_form() {
        let e = EnsembleSpec {
            label: "x".into(),
            emitters: None,
            uniform: None,
        };
        assert!(e.emitters().is_err());
    }
}
