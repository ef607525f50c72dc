//! Experiment runners and their on-disk artifacts.
//!
//! Every run writes its CSVs, a `summary.json` with the pass/fail verdict for
//! each configured tolerance, and a `manifest.json` recording the config hash,
//! seed, crate version and a checksum of every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    dft_with, fit_fringe, low_frequency_power, trace_stats, FringeFit, Spectrum, TraceStats,
};
use crate::config::{AnalysisSection, ScenarioConfig, ScenarioKind};
use crate::error::{Error, Result};
use crate::membrane::Rect;
use crate::mirror::{
    build_basis, calibrate_tension, calibration_sweep, couple_gap_regions, plane_search,
    solve_voltages, write_calibration_csv, CalibrationRow, InfluenceBasis, MirrorCommand,
    PlaneSearchOptions, PlaneSearchResult, PlaneTarget,
};
use crate::numfmt::sig9;
use crate::plant::{DriftModel, PlantState};
use crate::stabilizer::{run_closed_loop, run_free, write_events_csv, ClosedLoopRun};
use crate::trace::Trace;

pub const SCAN_HEADER: &str = "step,phase_rad,level,counts,mu";
pub const PLANE_SEARCH_HEADER: &str = "region1_x0_m,region2_x0_m,separation_m,rms_m,tilt_rad";

/// One pass/fail line of a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    /// Measured value; absent when it could not be computed
    pub value: Option<f64>,
    /// Human-readable acceptance condition
    pub limit: String,
    pub pass: bool,
}

impl Criterion {
    fn at_most(name: &str, value: Option<f64>, max: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!("<= {}", sig9(max)),
            pass: value.is_some_and(|v| v <= max),
        }
    }

    fn below(name: &str, value: Option<f64>, max: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!("< {}", sig9(max)),
            pass: value.is_some_and(|v| v < max),
        }
    }

    fn within(name: &str, value: Option<f64>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!("in [{}, {}]", sig9(lo), sig9(hi)),
            pass: value.is_some_and(|v| (lo..=hi).contains(&v)),
        }
    }

    fn near(name: &str, value: Option<f64>, expected: f64, rel_tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit: format!("{} ± {}%", sig9(expected), sig9(100.0 * rel_tol)),
            pass: value.is_some_and(|v| (v - expected).abs() <= rel_tol * expected.abs()),
        }
    }
}

/// Spectral digest stored in summaries and replay reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumDigest {
    pub bins: usize,
    pub degenerate: bool,
    pub cutoff_hz: f64,
    /// Share of the normalized power at `0 < f ≤ cutoff_hz`
    pub low_frequency_power: f64,
    /// Strongest non-DC physical frequency [Hz]
    pub peak_hz: Option<f64>,
}

impl SpectrumDigest {
    fn of(spectrum: &Spectrum, cutoff: f64) -> Self {
        Self {
            bins: spectrum.len(),
            degenerate: spectrum.degenerate,
            cutoff_hz: cutoff,
            low_frequency_power: low_frequency_power(spectrum, cutoff),
            peak_hz: spectrum.peak_bin().map(|k| spectrum.folded_frequency(k)),
        }
    }
}

/// Statistics and spectrum of one trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub stats: TraceStats,
    pub spectrum: SpectrumDigest,
}

/// Analyzes a trace without re-simulating it.
pub fn analyze_trace(trace: &Trace, analysis: &AnalysisSection) -> Result<TraceReport> {
    Ok(analyze(trace, analysis)?.0)
}

fn analyze(trace: &Trace, analysis: &AnalysisSection) -> Result<(TraceReport, Spectrum)> {
    let stats = trace_stats(trace)?;
    let spectrum = dft_with(trace, analysis.dft_options())?;
    let report = TraceReport {
        stats,
        spectrum: SpectrumDigest::of(&spectrum, analysis.cutoff_hz),
    };
    Ok((report, spectrum))
}

/// Kind-specific results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Details {
    FreeRun {
        trace: TraceReport,
    },
    PhaseScan {
        points: usize,
        /// Fit of the counted scan
        fit: FringeFit,
        /// Fit of the expected counts
        fit_mean: FringeFit,
        max_mean_counts: f64,
        min_mean_counts: f64,
    },
    Stabilize {
        lock_window: Option<usize>,
        trace: TraceReport,
        locked: Option<TraceReport>,
    },
    SpectrumCompare {
        lock_window: Option<usize>,
        free: TraceReport,
        locked: TraceReport,
        /// Locked low-frequency power over free-running
        low_frequency_ratio: Option<f64>,
    },
    MirrorCalibration {
        tension: f64,
        tension_calibrated: bool,
        region_1: Rect,
        region_2: Rect,
        levels: usize,
        max_rms_1: f64,
        max_rms_2: f64,
        mean_rms_1: f64,
        mean_rms_2: f64,
        max_tilt: f64,
        levels_meeting_threshold: usize,
        plane_search: Option<PlaneSearchSummary>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSearchSummary {
    pub separation: Option<f64>,
    pub region_1: Option<Rect>,
    pub region_2: Option<Rect>,
    pub rms: Option<f64>,
    pub accepted: usize,
    /// Failure reason when nothing met the threshold
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub duration_s: f64,
    pub criteria: Vec<Criterion>,
    pub pass: bool,
    pub details: Details,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    /// Format tag, bumped whenever the layout changes
    pub format: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    /// Hash of the config text as given
    pub config_sha256: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects artifacts in memory; nothing touches the disk until [`Self::flush`].
struct Artifacts {
    files: Vec<(String, &'static str, Vec<u8>)>,
}

impl Artifacts {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: &str, format: &'static str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), format, bytes));
    }

    fn add_with(
        &mut self,
        name: &str,
        format: &'static str,
        write: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, format, buf);
        Ok(())
    }

    fn flush(self, dir: &Path) -> Result<Vec<Artifact>> {
        fs::create_dir_all(dir)?;
        let mut listed = Vec::new();
        for (name, format, bytes) in self.files {
            fs::write(dir.join(&name), &bytes)?;
            listed.push(Artifact {
                name,
                format: format.to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(listed)
    }
}

/// Runs the configured experiment and writes its artifacts under `out_dir`.
///
/// `config_text` is only hashed into the manifest.
pub fn run_scenario(cfg: &ScenarioConfig, config_text: &str, out_dir: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut files = Artifacts::new();
    let (criteria, details) = match cfg.scenario.kind {
        ScenarioKind::FreeRun => free_run(cfg, &mut files)?,
        ScenarioKind::PhaseScan => phase_scan(cfg, &mut files)?,
        ScenarioKind::Stabilize => stabilize(cfg, &mut files)?,
        ScenarioKind::SpectrumCompare => spectrum_compare(cfg, &mut files)?,
        ScenarioKind::MirrorCalibration => mirror_calibration(cfg, &mut files)?,
    };
    let summary = Summary {
        kind: cfg.scenario.kind,
        seed: cfg.scenario.seed,
        duration_s: cfg.scenario.duration_s,
        pass: criteria.iter().all(|c| c.pass),
        criteria,
        details,
    };
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    files.add("summary.json", "summary-json/1", json);
    let artifacts = files.flush(out_dir)?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: cfg.scenario.kind,
        seed: cfg.scenario.seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
        artifacts,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(out_dir.join("manifest.json"), json)?;
    Ok(RunOutcome {
        summary,
        manifest,
        out_dir: out_dir.to_path_buf(),
    })
}

type Ran = (Vec<Criterion>, Details);

fn write_trace(files: &mut Artifacts, name: &str, trace: &Trace, hidden: bool) -> Result<()> {
    files.add_with(name, "trace-csv/1", |b| trace.write_csv(b, hidden))
}

fn free_run(cfg: &ScenarioConfig, files: &mut Artifacts) -> Result<Ran> {
    let mut plant = PlantState::new(cfg.plant_config())?;
    let trace = run_free(
        &mut plant,
        cfg.controller.initial_level,
        cfg.scenario.duration_s,
    )?;
    let (report, spectrum) = analyze(&trace, &cfg.analysis)?;
    write_trace(files, "trace.csv", &trace, cfg.scenario.hidden_columns)?;
    files.add_with("spectrum.csv", "spectrum-csv/1", |b| spectrum.write_csv(b))?;
    Ok((Vec::new(), Details::FreeRun { trace: report }))
}

/// One point of a stepped phase scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub step: usize,
    /// Mirror phase actually applied, unwrapped across re-wraps [rad]
    pub phase: f64,
    pub level: u8,
    pub counts: u64,
    pub mu: f64,
}

/// Steps the mirror by `step_rad` per window, folding the request back by 2π
/// whenever it would leave the actuator range.
pub fn run_phase_scan(cfg: &ScenarioConfig) -> Result<Vec<ScanPoint>> {
    let scan = &cfg.phase_scan;
    let mut plant_cfg = cfg.plant_config();
    if !scan.drift {
        plant_cfg.drift = DriftModel::none();
        plant_cfg.initial_phase = Some(scan.initial_phase);
    }
    let mut plant = PlantState::new(plant_cfg)?;
    let mirror = plant.config().mirror;
    let range = mirror.phase_range();
    if range < std::f64::consts::TAU {
        return Err(Error::Config(format!(
            "phase scan needs a mirror range of at least 2π, got {range} rad"
        )));
    }
    let base = mirror.command_to_phase(MirrorCommand::from_level(scan.start_level));
    let mut points = Vec::with_capacity(scan.steps);
    for step in 0..scan.steps {
        let wanted = base + step as f64 * scan.step_rad;
        let folds = ((wanted - range) / std::f64::consts::TAU).ceil().max(0.0);
        let folded = wanted - folds * std::f64::consts::TAU;
        let level = mirror.level_for_phase(folded);
        let cmd = MirrorCommand::from_level(level);
        plant.set_mirror(cmd);
        let m = plant.measure();
        points.push(ScanPoint {
            step,
            phase: mirror.command_to_phase(cmd) + folds * std::f64::consts::TAU,
            level,
            counts: m.counts,
            mu: m.mu,
        });
    }
    Ok(points)
}

fn phase_scan(cfg: &ScenarioConfig, files: &mut Artifacts) -> Result<Ran> {
    let points = run_phase_scan(cfg)?;
    files.add_with("scan.csv", "scan-csv/1", |b| {
        use std::io::Write;
        writeln!(b, "{SCAN_HEADER}")?;
        for p in &points {
            writeln!(
                b,
                "{},{},{},{},{}",
                p.step,
                sig9(p.phase),
                p.level,
                p.counts,
                sig9(p.mu)
            )?;
        }
        Ok(())
    })?;
    let counted: Vec<(f64, f64)> = points.iter().map(|p| (p.phase, p.counts as f64)).collect();
    let expected: Vec<(f64, f64)> = points.iter().map(|p| (p.phase, p.mu)).collect();
    let fit = fit_fringe(&counted)?;
    let fit_mean = fit_fringe(&expected)?;
    let max_mu = points
        .iter()
        .map(|p| p.mu)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_mu = points.iter().map(|p| p.mu).fold(f64::INFINITY, f64::min);
    let c = &cfg.check;
    let criteria = vec![
        Criterion::within(
            "fitted_visibility",
            Some(fit.visibility),
            c.visibility_min,
            c.visibility_max,
        ),
        Criterion::near(
            "max_mean_counts",
            Some(max_mu),
            c.expected_max_counts,
            c.extremes_tolerance,
        ),
        Criterion::near(
            "min_mean_counts",
            Some(min_mu),
            c.expected_min_counts,
            c.extremes_tolerance,
        ),
    ];
    Ok((
        criteria,
        Details::PhaseScan {
            points: points.len(),
            fit,
            fit_mean,
            max_mean_counts: max_mu,
            min_mean_counts: min_mu,
        },
    ))
}

fn closed_loop(cfg: &ScenarioConfig) -> Result<ClosedLoopRun> {
    let mut plant = PlantState::new(cfg.plant_config())?;
    run_closed_loop(
        &mut plant,
        &cfg.controller_config(),
        cfg.scenario.duration_s,
    )
}

fn lock_criterion(cfg: &ScenarioConfig, lock_window: Option<usize>) -> Criterion {
    Criterion::at_most(
        "lock_window",
        lock_window.map(|k| k as f64),
        cfg.check.max_lock_windows as f64,
    )
}

fn stabilize(cfg: &ScenarioConfig, files: &mut Artifacts) -> Result<Ran> {
    let run = closed_loop(cfg)?;
    let (report, spectrum) = analyze(&run.trace, &cfg.analysis)?;
    let locked = match run.locked_trace() {
        Some(t) if t.len() >= 2 => Some(analyze_trace(&t, &cfg.analysis)?),
        _ => None,
    };
    write_trace(files, "trace.csv", &run.trace, cfg.scenario.hidden_columns)?;
    files.add_with("events.csv", "events-csv/1", |b| {
        write_events_csv(&run.events, b)
    })?;
    files.add_with("spectrum.csv", "spectrum-csv/1", |b| spectrum.write_csv(b))?;
    let criteria = vec![
        lock_criterion(cfg, run.lock_window),
        Criterion::at_most(
            "locked_sigma_ratio",
            locked.map(|r| r.stats.ratio),
            cfg.check.max_sigma_ratio,
        ),
    ];
    Ok((
        criteria,
        Details::Stabilize {
            lock_window: run.lock_window,
            trace: report,
            locked,
        },
    ))
}

fn spectrum_compare(cfg: &ScenarioConfig, files: &mut Artifacts) -> Result<Ran> {
    // The drift has its own random stream, so both runs see the same drift.
    let (free, locked) = std::thread::scope(|s| {
        let free = s.spawn(|| {
            let mut plant = PlantState::new(cfg.plant_config())?;
            run_free(
                &mut plant,
                cfg.controller.initial_level,
                cfg.scenario.duration_s,
            )
        });
        let locked = s.spawn(|| closed_loop(cfg));
        (
            free.join().expect("free-running worker panicked"),
            locked.join().expect("closed-loop worker panicked"),
        )
    });
    let (free, run) = (free?, locked?);
    write_trace(files, "trace_free.csv", &free, cfg.scenario.hidden_columns)?;
    write_trace(
        files,
        "trace_locked.csv",
        &run.trace,
        cfg.scenario.hidden_columns,
    )?;
    files.add_with("events.csv", "events-csv/1", |b| {
        write_events_csv(&run.events, b)
    })?;

    let (free_report, free_spectrum) = analyze(&free, &cfg.analysis)?;
    let (locked_report, locked_spectrum) = analyze(&run.trace, &cfg.analysis)?;
    files.add_with("spectrum_free.csv", "spectrum-csv/1", |b| {
        free_spectrum.write_csv(b)
    })?;
    files.add_with("spectrum_locked.csv", "spectrum-csv/1", |b| {
        locked_spectrum.write_csv(b)
    })?;
    let ratio = (free_report.spectrum.low_frequency_power > 0.0).then(|| {
        locked_report.spectrum.low_frequency_power / free_report.spectrum.low_frequency_power
    });
    let criteria = vec![
        lock_criterion(cfg, run.lock_window),
        Criterion::below(
            "low_frequency_power_ratio",
            ratio,
            cfg.check.max_low_frequency_ratio,
        ),
    ];
    Ok((
        criteria,
        Details::SpectrumCompare {
            lock_window: run.lock_window,
            free: free_report,
            locked: locked_report,
            low_frequency_ratio: ratio,
        },
    ))
}

/// Calibrated mirror model: basis at the working tension and the plane regions.
#[derive(Debug, Clone)]
pub struct MirrorCalibration {
    pub basis: InfluenceBasis,
    pub tension: f64,
    /// The tension was derived from the stroke rather than configured
    pub tension_calibrated: bool,
    pub region_1: Rect,
    pub region_2: Rect,
}

/// Builds the influence basis and fixes the tension: the configured value,
/// or the one at which full drive reaches exactly the configured stroke.
pub fn calibrate(cfg: &ScenarioConfig) -> Result<MirrorCalibration> {
    let m = &cfg.mirror;
    let geom = m.geometry()?;
    let layout = m.layout(&geom)?;
    let reference = build_basis(&geom, &layout)?;
    let (region_1, region_2) = couple_gap_regions(&geom, m.couple_separation, m.region_size);
    let (tension, calibrated) = match m.tension {
        Some(t) => (t, false),
        None => (
            calibrate_tension(&reference, &region_1, &region_2, m.stroke)?,
            true,
        ),
    };
    Ok(MirrorCalibration {
        basis: reference.with_tension(tension)?,
        tension,
        tension_calibrated: calibrated,
        region_1,
        region_2,
    })
}

/// Calibration plus the full-stroke sweep over all command levels.
pub fn calibration_table(cfg: &ScenarioConfig) -> Result<(MirrorCalibration, Vec<CalibrationRow>)> {
    let cal = calibrate(cfg)?;
    let rows = calibration_sweep(
        &cal.basis,
        &cal.region_1,
        &cal.region_2,
        cfg.mirror.stroke,
        cfg.mirror.flatness_threshold,
    )?;
    Ok((cal, rows))
}

fn mirror_calibration(cfg: &ScenarioConfig, files: &mut Artifacts) -> Result<Ran> {
    let m = &cfg.mirror;
    let (cal, rows) = calibration_table(cfg)?;
    files.add_with("calibration.csv", "calibration-csv/1", |b| {
        write_calibration_csv(&rows, b)
    })?;

    let full = solve_voltages(
        &cal.basis,
        &PlaneTarget::relative(cal.region_1, cal.region_2, m.stroke, m.flatness_threshold),
    )?;
    files.add_with("deformation_full_stroke.grid", "grid-text/1", |b| {
        full.achieved.write_grid(b)
    })?;

    let search = plane_search(
        &cal.basis,
        &PlaneSearchOptions {
            region_size: m.region_size,
            threshold: m.flatness_threshold,
            stroke: m.stroke,
            step: m.search_step,
        },
    );
    let search_summary = match &search {
        Ok(r) => {
            files.add_with("plane_search.csv", "plane-search-csv/1", |b| {
                write_plane_search(r, b)
            })?;
            PlaneSearchSummary {
                separation: Some(r.separation),
                region_1: Some(r.region_1),
                region_2: Some(r.region_2),
                rms: Some(r.rms),
                accepted: r.accepted.len(),
                error: None,
            }
        }
        Err(e @ Error::NoFeasiblePlanes { .. }) => PlaneSearchSummary {
            separation: None,
            region_1: None,
            region_2: None,
            rms: None,
            accepted: 0,
            error: Some(e.to_string()),
        },
        Err(e) => return Err(Error::Config(format!("plane search failed: {e}"))),
    };

    let n = rows.len() as f64;
    let max = |f: fn(&CalibrationRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let mean = |f: fn(&CalibrationRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (max_rms_1, max_rms_2) = (max(|r| r.rms1), max(|r| r.rms2));
    let (mean_rms_1, mean_rms_2) = (mean(|r| r.rms1), mean(|r| r.rms2));
    let max_tilt = max(|r| r.tilt);
    let c = &cfg.check;
    let criteria = vec![
        Criterion::below(
            "max_plane_rms",
            Some(max_rms_1.max(max_rms_2)),
            m.flatness_threshold,
        ),
        Criterion::below(
            "mean_plane_rms",
            Some(mean_rms_1.max(mean_rms_2)),
            c.max_mean_flatness,
        ),
        Criterion::below("max_tilt", Some(max_tilt), c.max_tilt),
        Criterion::near(
            "plane_separation",
            search_summary.separation,
            c.expected_separation,
            c.separation_tolerance,
        ),
    ];
    Ok((
        criteria,
        Details::MirrorCalibration {
            tension: cal.tension,
            tension_calibrated: cal.tension_calibrated,
            region_1: cal.region_1,
            region_2: cal.region_2,
            levels: rows.len(),
            max_rms_1,
            max_rms_2,
            mean_rms_1,
            mean_rms_2,
            max_tilt,
            levels_meeting_threshold: rows.iter().filter(|r| r.meets_threshold).count(),
            plane_search: Some(search_summary),
        },
    ))
}

fn write_plane_search(r: &PlaneSearchResult, b: &mut Vec<u8>) -> Result<()> {
    use std::io::Write;
    writeln!(b, "{PLANE_SEARCH_HEADER}")?;
    for c in &r.accepted {
        writeln!(
            b,
            "{},{},{},{},{}",
            sig9(c.region_1.x0),
            sig9(c.region_2.x0),
            sig9(c.separation),
            sig9(c.rms),
            sig9(c.parallelism)
        )?;
    }
    Ok(())
}

/// Report produced by `replay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub path: String,
    pub dwell: f64,
    pub trace: TraceReport,
}

pub fn replay(path: &Path, analysis: &AnalysisSection) -> Result<ReplayReport> {
    let trace = Trace::read_csv_file(path)?;
    Ok(ReplayReport {
        path: path.display().to_string(),
        dwell: trace.dwell,
        trace: analyze_trace(&trace, analysis)?,
    })
}
