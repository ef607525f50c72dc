//! Declarative scenario configuration.
//!
//! Configs are TOML documents: named sections of `key = value` lines, with
//! dotted keys and `[[array]]` tables where lists are needed. Only
//! `scenario.kind` is required; every other key has a default. Unknown keys
//! anywhere are rejected so typos cannot silently fall back to defaults.
//!
//! ```toml
//! [scenario]
//! kind = "stabilize"
//! duration_s = 2000.0
//! seed = 7
//!
//! [drift]
//! kind = "ou_process"
//! correlation_time = 100.0
//! amplitude = 1.0
//!
//! [[drift.sinusoids]]
//! frequency = 0.5e-3
//! amplitude = 0.8
//! ```

use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{DftOptions, Window};
use crate::error::{Error, Result};
use crate::membrane::{ElectrodeLayout, MembraneGeometry};
use crate::mirror::{
    MirrorActuator, DEFAULT_FLATNESS_THRESHOLD, DEFAULT_REGION_SIZE, DEFAULT_SEARCH_STEP,
};
use crate::optics::SourceParams;
use crate::plant::{DriftKind, DriftModel, PlantConfig, Sinusoid};
use crate::stabilizer::ControllerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Mirror parked, drift running
    FreeRun,
    /// Stepped mirror scan over the fringe with drift off
    PhaseScan,
    /// Closed-loop lock
    Stabilize,
    /// Free run and lock on the same drift, spectra compared
    SpectrumCompare,
    /// Voltage synthesis over the full stroke and plane placement search
    MirrorCalibration,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::FreeRun => "free_run",
            ScenarioKind::PhaseScan => "phase_scan",
            ScenarioKind::Stabilize => "stabilize",
            ScenarioKind::SpectrumCompare => "spectrum_compare",
            ScenarioKind::MirrorCalibration => "mirror_calibration",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Include the simulator-only columns in trace files
    #[serde(default = "yes")]
    pub hidden_columns: bool,
}

fn default_duration() -> f64 {
    2000.0
}
fn default_seed() -> u64 {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub pair_rate: f64,
    pub visibility: f64,
    pub wavelength: f64,
    pub pump_wavelength: f64,
    pub filter_bandwidth: f64,
    pub accidental_rate: f64,
}

impl Default for SourceSection {
    fn default() -> Self {
        let s = SourceParams::default();
        Self {
            pair_rate: s.pair_rate,
            visibility: s.visibility,
            wavelength: s.wavelength,
            pump_wavelength: s.pump_wavelength,
            filter_bandwidth: s.filter_bandwidth,
            accidental_rate: s.accidental_rate,
        }
    }
}

impl SourceSection {
    pub fn params(&self) -> SourceParams {
        SourceParams {
            pair_rate: self.pair_rate,
            visibility: self.visibility,
            wavelength: self.wavelength,
            pump_wavelength: self.pump_wavelength,
            filter_bandwidth: self.filter_bandwidth,
            accidental_rate: self.accidental_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidEntry {
    pub frequency: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSection {
    pub kind: DriftKind,
    pub correlation_time: f64,
    pub amplitude: f64,
    pub sinusoids: Vec<SinusoidEntry>,
}

impl Default for DriftSection {
    fn default() -> Self {
        let d = DriftModel::default();
        Self {
            kind: d.kind,
            correlation_time: d.correlation_time,
            amplitude: d.amplitude,
            sinusoids: d
                .sinusoids
                .iter()
                .map(|s| SinusoidEntry {
                    frequency: s.frequency,
                    amplitude: s.amplitude,
                    phase: s.phase,
                })
                .collect(),
        }
    }
}

impl DriftSection {
    pub fn model(&self) -> DriftModel {
        DriftModel {
            kind: self.kind,
            correlation_time: self.correlation_time,
            amplitude: self.amplitude,
            sinusoids: self
                .sinusoids
                .iter()
                .map(|s| Sinusoid {
                    frequency: s.frequency,
                    amplitude: s.amplitude,
                    phase: s.phase,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    /// [s]
    pub dwell: f64,
    /// [s]
    pub max_substep: f64,
    /// Drift offset at t = 0 [rad]; uniform random when absent
    pub initial_phase: Option<f64>,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            dwell: 2.0,
            max_substep: 1.0,
            initial_phase: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MirrorSection {
    /// Full-scale relative plane displacement [m]
    pub stroke: f64,
    pub reflection_factor: f64,
    /// Membrane extent [m]
    pub width: f64,
    pub height: f64,
    /// [N/m]; calibrated to the stroke when absent
    pub tension: Option<f64>,
    /// Membrane-to-electrode distance [m]
    pub gap: f64,
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Electrode couple geometry [m]
    pub pad_width: f64,
    pub pad_length: f64,
    pub couple_separation: f64,
    /// [V]
    pub max_voltage: f64,
    /// Side of each square plane region [m]
    pub region_size: f64,
    /// [m rms]
    pub flatness_threshold: f64,
    /// Plane search step [m]
    pub search_step: f64,
}

impl Default for MirrorSection {
    fn default() -> Self {
        Self {
            stroke: 600e-9,
            reflection_factor: 2.0,
            width: 30e-3,
            height: 15e-3,
            tension: None,
            gap: 100e-6,
            grid_nx: 151,
            grid_ny: 76,
            pad_width: 1.4e-3,
            pad_length: 15e-3,
            couple_separation: 11.2e-3,
            max_voltage: 265.0,
            region_size: DEFAULT_REGION_SIZE,
            flatness_threshold: DEFAULT_FLATNESS_THRESHOLD,
            search_step: DEFAULT_SEARCH_STEP,
        }
    }
}

/// Tension used to build the reference basis before calibration [N/m].
pub const REFERENCE_TENSION: f64 = 100.0;

impl MirrorSection {
    pub fn actuator(&self, wavelength: f64) -> MirrorActuator {
        MirrorActuator {
            stroke: self.stroke,
            wavelength,
            reflection_factor: self.reflection_factor,
        }
    }

    /// Geometry at the configured tension, or the reference tension when the
    /// tension is left to calibration.
    pub fn geometry(&self) -> Result<MembraneGeometry> {
        MembraneGeometry::new(
            self.width,
            self.height,
            self.tension.unwrap_or(REFERENCE_TENSION),
            self.gap,
            self.grid_nx,
            self.grid_ny,
        )
    }

    pub fn layout(&self, geom: &MembraneGeometry) -> Result<ElectrodeLayout> {
        ElectrodeLayout::two_couples(
            geom,
            self.pad_width,
            self.pad_length,
            self.couple_separation,
            self.max_voltage,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    /// Expected counts at the maximum; the source's fringe maximum when absent
    pub c_max: Option<f64>,
    /// `c_max - √c_max` when absent
    pub threshold: Option<f64>,
    pub probe_step: f64,
    /// `2√c_max` when absent
    pub hold_band: Option<f64>,
    pub confirm_windows: u32,
    pub target_offset: f64,
    /// The source visibility when absent
    pub visibility: Option<f64>,
    pub visibility_compensation: bool,
    pub deadband: bool,
    pub initial_level: u8,
}

impl Default for ControllerSection {
    fn default() -> Self {
        Self {
            c_max: None,
            threshold: None,
            probe_step: 0.1,
            hold_band: None,
            confirm_windows: 2,
            target_offset: 0.0,
            visibility: None,
            visibility_compensation: true,
            deadband: true,
            initial_level: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseScanSection {
    pub steps: usize,
    /// [rad]
    pub step_rad: f64,
    pub start_level: u8,
    /// Keep the configured drift running during the scan
    pub drift: bool,
    /// Drift offset during the scan [rad]
    pub initial_phase: f64,
}

impl Default for PhaseScanSection {
    fn default() -> Self {
        Self {
            steps: 30,
            step_rad: FRAC_PI_4,
            start_level: 0,
            drift: false,
            initial_phase: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Upper edge of the low-frequency band [Hz]
    pub cutoff_hz: f64,
    pub subtract_mean: bool,
    pub window: Window,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            cutoff_hz: 1e-3,
            subtract_mean: true,
            window: Window::Rectangular,
        }
    }
}

impl AnalysisSection {
    pub fn dft_options(&self) -> DftOptions {
        DftOptions {
            subtract_mean: self.subtract_mean,
            window: self.window,
        }
    }
}

/// Pass/fail limits reported in every summary and enforced by `--check`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub max_sigma_ratio: f64,
    pub max_lock_windows: usize,
    pub visibility_min: f64,
    pub visibility_max: f64,
    /// Expected fringe extremes of the mean counts
    pub expected_max_counts: f64,
    pub expected_min_counts: f64,
    pub extremes_tolerance: f64,
    /// Stabilized low-frequency power over free-running, upper limit
    pub max_low_frequency_ratio: f64,
    /// [m rms]
    pub max_mean_flatness: f64,
    /// [rad]
    pub max_tilt: f64,
    /// [m]
    pub expected_separation: f64,
    pub separation_tolerance: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            max_sigma_ratio: 1.5,
            max_lock_windows: 10,
            visibility_min: 0.76,
            visibility_max: 0.80,
            expected_max_counts: 800.0,
            expected_min_counts: 99.0,
            extremes_tolerance: 0.05,
            max_low_frequency_ratio: 0.5,
            max_mean_flatness: 30e-9,
            max_tilt: 50e-6,
            expected_separation: 11.2e-3,
            separation_tolerance: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub source: SourceSection,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default)]
    pub plant: PlantSection,
    #[serde(default)]
    pub mirror: MirrorSection,
    #[serde(default)]
    pub controller: ControllerSection,
    #[serde(default)]
    pub phase_scan: PhaseScanSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub check: CheckSection,
}

impl ScenarioConfig {
    /// Parses and validates a config document. `origin` names it in errors.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate()
            .map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text, &path.display().to_string())?;
        Ok((cfg, text))
    }

    /// Defaults for `kind`, as if the config held only `scenario.kind`.
    pub fn defaults(kind: ScenarioKind) -> Self {
        Self {
            scenario: ScenarioSection {
                kind,
                duration_s: default_duration(),
                seed: default_seed(),
                output_dir: default_output_dir(),
                hidden_columns: true,
            },
            source: SourceSection::default(),
            drift: DriftSection::default(),
            plant: PlantSection::default(),
            mirror: MirrorSection::default(),
            controller: ControllerSection::default(),
            phase_scan: PhaseScanSection::default(),
            analysis: AnalysisSection::default(),
            check: CheckSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
            return Err(Error::Config(format!(
                "scenario.duration_s must be positive, got {}",
                s.duration_s
            )));
        }
        self.plant_config().validate()?;
        let m = &self.mirror;
        if let Some(t) = m.tension {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!(
                    "mirror.tension must be positive, got {t}"
                )));
            }
        }
        let geom = m.geometry()?;
        m.layout(&geom)?;
        for (name, v) in [
            ("mirror.region_size", m.region_size),
            ("mirror.search_step", m.search_step),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(m.flatness_threshold >= 0.0) {
            return Err(Error::Config(
                "mirror.flatness_threshold must be non-negative".into(),
            ));
        }
        self.controller_config().validate()?;
        let p = &self.phase_scan;
        if p.steps < 5 {
            return Err(Error::Config(format!(
                "phase_scan.steps must be at least 5, got {}",
                p.steps
            )));
        }
        if !(p.step_rad.is_finite() && p.step_rad > 0.0) {
            return Err(Error::Config("phase_scan.step_rad must be positive".into()));
        }
        if !p.initial_phase.is_finite() {
            return Err(Error::Config(
                "phase_scan.initial_phase must be finite".into(),
            ));
        }
        if !(self.analysis.cutoff_hz > 0.0) {
            return Err(Error::Config("analysis.cutoff_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn source_params(&self) -> SourceParams {
        self.source.params()
    }

    pub fn actuator(&self) -> MirrorActuator {
        self.mirror.actuator(self.source.wavelength)
    }

    pub fn plant_config(&self) -> PlantConfig {
        PlantConfig {
            source: self.source_params(),
            drift: self.drift.model(),
            mirror: self.actuator(),
            dwell: self.plant.dwell,
            max_substep: self.plant.max_substep,
            initial_phase: self.plant.initial_phase,
            seed: self.scenario.seed,
        }
    }

    pub fn controller_config(&self) -> ControllerConfig {
        let c = &self.controller;
        let c_max = c
            .c_max
            .unwrap_or_else(|| self.source_params().max_counts(self.plant.dwell));
        let base =
            ControllerConfig::for_max_counts(c_max, c.visibility.unwrap_or(self.source.visibility));
        ControllerConfig {
            threshold: c.threshold.unwrap_or(base.threshold),
            probe_step: c.probe_step,
            hold_band: c.hold_band.unwrap_or(base.hold_band),
            confirm_windows: c.confirm_windows,
            target_offset: c.target_offset,
            visibility_compensation: c.visibility_compensation,
            deadband: c.deadband,
            initial_level: c.initial_level,
            ..base
        }
    }

    /// Number of dwell windows in the run.
    pub fn windows(&self) -> usize {
        (self.scenario.duration_s / self.plant.dwell)
            .round()
            .max(1.0) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ScenarioConfig::from_toml("[scenario]\nkind = \"stabilize\"\n", "t").unwrap();
        assert_eq!(cfg, ScenarioConfig::defaults(ScenarioKind::Stabilize));
        let ctrl = cfg.controller_config();
        assert!((ctrl.c_max - 799.932).abs() < 1e-9);
        assert_eq!(cfg.windows(), 1000);
        assert_eq!(cfg.plant_config().drift.sinusoids.len(), 2);
    }

    #[test]
    fn missing_kind_is_named() {
        let err = ScenarioConfig::from_toml("[scenario]\nseed = 3\n", "cfg.toml").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kind"), "{msg}");
        assert!(msg.contains("cfg.toml"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[scenario]\nkind = \"free_run\"\n[drift]\namplitud = 1.0\n";
        let msg = ScenarioConfig::from_toml(text, "t")
            .unwrap_err()
            .to_string();
        assert!(msg.contains("amplitud"), "{msg}");
        let text = "[scenario]\nkind = \"free_run\"\n[extra]\nx = 1\n";
        assert!(ScenarioConfig::from_toml(text, "t").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for body in [
            "[source]\nvisibility = 1.5\n",
            "[plant]\ndwell = 0.0\n",
            "[controller]\nprobe_step = 2.0\n",
            "[mirror]\nmax_voltage = 300.0\n",
            "[mirror]\ntension = -1.0\n",
            "[phase_scan]\nsteps = 2\n",
            "[drift]\ncorrelation_time = 0.0\n",
        ] {
            let text = format!("[scenario]\nkind = \"free_run\"\n{body}");
            assert!(ScenarioConfig::from_toml(&text, "t").is_err(), "{body}");
        }
    }

    #[test]
    fn sinusoids_and_overrides() {
        let text = r#"
[scenario]
kind = "free_run"
seed = 9
duration_s = 100.0

[drift]
kind = "random_walk"
[[drift.sinusoids]]
frequency = 2e-3
amplitude = 0.1
phase = 0.5

[controller]
c_max = 700.0
threshold = 650.0
"#;
        let cfg = ScenarioConfig::from_toml(text, "t").unwrap();
        let d = cfg.drift.model();
        assert_eq!(d.kind, DriftKind::RandomWalk);
        assert_eq!(d.sinusoids.len(), 1);
        assert_eq!(d.sinusoids[0].phase, Some(0.5));
        let c = cfg.controller_config();
        assert_eq!((c.c_max, c.threshold), (700.0, 650.0));
        assert_eq!(cfg.windows(), 50);
        assert_eq!(cfg.plant_config().seed, 9);
    }
}
