//! Threshold / probe / correct phase lock.
//!
//! Every dwell window the controller reads one coincidence count `C` and acts:
//!
//! - `C < T/2`: the phase is far from the maximum, shift the mirror by `π`.
//! - `T/2 ≤ C < T`: estimate the distance to the maximum as
//!   `Δφ = 2 arccos √(C/T)`, nudge the mirror by a small probe step, and in the
//!   next window apply `+Δφ` if the counts went up or `-Δφ` if they went down.
//! - `C ≥ T`: locked, leave the mirror alone.
//!
//! Once locked the controller only watches for the counts to sag below the
//! hold band for a few windows in a row, then starts over.

use std::f64::consts::{PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mirror::{MirrorActuator, MirrorCommand};
use crate::numfmt::sig9;
use crate::plant::{Measurement, PlantState};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Expected counts per window at the fringe maximum
    pub c_max: f64,
    /// Lock threshold `T`
    pub threshold: f64,
    /// [rad]
    pub probe_step: f64,
    /// Counts below `T` tolerated while locked
    pub hold_band: f64,
    /// Consecutive low windows before re-acquiring
    pub confirm_windows: u32,
    /// Phase to hold relative to the maximum once locked [rad]
    pub target_offset: f64,
    /// Fringe visibility assumed by the count rescaling
    pub visibility: f64,
    /// Rescale counts so the fringe floor maps to zero before estimating
    pub visibility_compensation: bool,
    /// Skip corrections smaller than one Poisson standard deviation of `T`
    pub deadband: bool,
    /// Mirror level at start-up
    pub initial_level: u8,
}

impl ControllerConfig {
    /// Defaults derived from the expected maximum: `T = c_max - √c_max`,
    /// hold band `2√c_max`.
    pub fn for_max_counts(c_max: f64, visibility: f64) -> Self {
        Self {
            c_max,
            threshold: c_max - c_max.sqrt(),
            probe_step: 0.1,
            hold_band: 2.0 * c_max.sqrt(),
            confirm_windows: 2,
            target_offset: 0.0,
            visibility,
            visibility_compensation: true,
            deadband: true,
            initial_level: 128,
        }
    }

    pub fn half_threshold(&self) -> f64 {
        0.5 * self.threshold
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_max.is_finite() && self.c_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "c_max must be positive, got {}",
                self.c_max
            )));
        }
        if !(self.threshold > 0.0 && self.threshold <= self.c_max) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in (0, c_max = {}], got {}",
                self.c_max, self.threshold
            )));
        }
        if !(self.probe_step > 0.0 && self.probe_step <= PI / 4.0) {
            return Err(Error::InvalidParameter(format!(
                "probe_step must lie in (0, π/4], got {}",
                self.probe_step
            )));
        }
        if !(self.hold_band.is_finite() && self.hold_band >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "hold_band must be non-negative, got {}",
                self.hold_band
            )));
        }
        if self.confirm_windows == 0 {
            return Err(Error::InvalidParameter(
                "confirm_windows must be at least 1".into(),
            ));
        }
        if !self.target_offset.is_finite() {
            return Err(Error::InvalidParameter(
                "target_offset must be finite".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.visibility)
            || (self.visibility_compensation && self.visibility == 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "visibility must lie in (0, 1] for compensation, got {}",
                self.visibility
            )));
        }
        Ok(())
    }

    /// Counts at the fringe minimum implied by `c_max` and the visibility.
    pub fn fringe_floor(&self) -> f64 {
        self.c_max * (1.0 - self.visibility) / (1.0 + self.visibility)
    }

    /// Maps raw counts onto a unit-visibility fringe with the same maximum.
    pub fn compensate(&self, counts: f64) -> f64 {
        if !self.visibility_compensation {
            return counts;
        }
        let floor = self.fringe_floor();
        ((counts - floor) * self.c_max / (self.c_max - floor)).max(0.0)
    }

    /// Smallest correction worth applying [rad].
    pub fn deadband_phase(&self) -> f64 {
        if self.deadband {
            estimate_correction(self.threshold - self.threshold.sqrt(), self)
        } else {
            0.0
        }
    }
}

/// `2 arccos √(min(C, T)/T)`: phase distance to the nearest maximum.
pub fn estimate_correction(counts: f64, cfg: &ControllerConfig) -> f64 {
    let t = cfg.threshold;
    2.0 * (counts.clamp(0.0, t) / t).sqrt().acos()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Acquiring,
    Probing,
    Locked,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Acquiring => "acquiring",
            Mode::Probing => "probing",
            Mode::Locked => "locked",
        }
    }
}

/// What the controller did after a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Hold,
    PiShift,
    Probe,
    Correct,
    Lock,
    Reacquire,
    /// Requested phase outside the mirror range even after re-wrapping
    LockLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    /// Window start [s]
    pub t: f64,
    /// Mode after the decision
    pub mode: Mode,
    pub counts: u64,
    /// `Δφ` estimated this window, 0 when none was computed
    pub estimated_dphi: f64,
    pub commanded_level: u8,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Probe {
    counts_before: f64,
    dphi: f64,
    base_phase: f64,
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub mode: Mode,
    pub last_counts: Option<u64>,
    /// Phase currently applied by the mirror [rad]
    pub mirror_phase: f64,
    pub level: u8,
    pub events: Vec<ControllerEvent>,
    low_windows: u32,
    probe: Option<Probe>,
    offset_applied: bool,
}

impl ControllerState {
    pub fn new(cfg: &ControllerConfig, mirror: &MirrorActuator) -> Self {
        let level = cfg.initial_level;
        Self {
            mode: Mode::Acquiring,
            last_counts: None,
            mirror_phase: mirror.command_to_phase(MirrorCommand::from_level(level)),
            level,
            events: Vec::new(),
            low_windows: 0,
            probe: None,
            offset_applied: false,
        }
    }

    pub fn command(&self) -> MirrorCommand {
        MirrorCommand::from_level(self.level)
    }

    /// Moves the mirror to `target`, re-wrapping by whole turns to stay inside
    /// the actuator range. Returns false when no wrap fits.
    fn command_phase(&mut self, target: f64, mirror: &MirrorActuator) -> bool {
        let q = mirror.phase_quantum();
        let (lo, hi) = (-0.5 * q, mirror.phase_range() + 0.5 * q);
        let mut phi = target;
        while phi < lo {
            phi += TAU;
        }
        while phi > hi {
            phi -= TAU;
        }
        let ok = phi >= lo;
        self.level = mirror.level_for_phase(phi);
        self.mirror_phase = mirror.command_to_phase(MirrorCommand::from_level(self.level));
        ok
    }

    /// Shifts the applied phase by `delta`; a failed wrap is reported as lock loss.
    fn shift(&mut self, from: f64, delta: f64, mirror: &MirrorActuator, action: Action) -> Action {
        if self.command_phase(from + delta, mirror) {
            action
        } else {
            Action::LockLoss
        }
    }

    /// Feeds one window's counts through the decision tree and updates the
    /// mirror command. `counts` may be fractional for noiseless analysis.
    pub fn observe(
        &mut self,
        t: f64,
        counts: f64,
        cfg: &ControllerConfig,
        mirror: &MirrorActuator,
    ) -> ControllerEvent {
        let c = cfg.compensate(counts);
        let mut dphi = 0.0;
        let action = match self.mode {
            Mode::Probing => {
                let p = self.probe.take().expect("probing without a stored probe");
                dphi = p.dphi;
                let sign = if probe_says_ascending(&p, c, cfg) {
                    1.0
                } else {
                    -1.0
                };
                self.mode = Mode::Acquiring;
                self.shift(p.base_phase, sign * p.dphi, mirror, Action::Correct)
            }
            Mode::Locked => {
                if self.within_hold(c, cfg) {
                    self.low_windows = 0;
                    Action::Hold
                } else {
                    self.low_windows += 1;
                    if self.low_windows < cfg.confirm_windows {
                        Action::Hold
                    } else {
                        self.low_windows = 0;
                        self.mode = Mode::Acquiring;
                        if self.offset_applied {
                            // These counts were taken away from the maximum;
                            // return there first and measure again.
                            self.offset_applied = false;
                            let from = self.mirror_phase;
                            self.shift(from, -cfg.target_offset, mirror, Action::Reacquire)
                        } else {
                            let (a, d) = self.acquire(c, cfg, mirror);
                            dphi = d;
                            if a == Action::Hold {
                                Action::Reacquire
                            } else {
                                a
                            }
                        }
                    }
                }
            }
            Mode::Acquiring => {
                let (a, d) = self.acquire(c, cfg, mirror);
                dphi = d;
                a
            }
        };
        let event = ControllerEvent {
            t,
            mode: self.mode,
            counts: counts.max(0.0).round() as u64,
            estimated_dphi: dphi,
            commanded_level: self.level,
            action,
        };
        self.last_counts = Some(event.counts);
        self.events.push(event);
        event
    }

    fn acquire(
        &mut self,
        c: f64,
        cfg: &ControllerConfig,
        mirror: &MirrorActuator,
    ) -> (Action, f64) {
        if c >= cfg.threshold {
            return (self.lock(cfg, mirror), 0.0);
        }
        let from = self.mirror_phase;
        if c < cfg.half_threshold() {
            return (self.shift(from, PI, mirror, Action::PiShift), 0.0);
        }
        let dphi = estimate_correction(c, cfg);
        if dphi < cfg.deadband_phase() {
            // Within one count-noise standard deviation of the threshold.
            return (self.lock(cfg, mirror), dphi);
        }
        self.probe = Some(Probe {
            counts_before: c,
            dphi,
            base_phase: from,
        });
        self.mode = Mode::Probing;
        (
            self.shift(from, cfg.probe_step, mirror, Action::Probe),
            dphi,
        )
    }

    fn lock(&mut self, cfg: &ControllerConfig, mirror: &MirrorActuator) -> Action {
        self.mode = Mode::Locked;
        self.low_windows = 0;
        if cfg.target_offset != 0.0 && !self.offset_applied {
            self.offset_applied = true;
            let from = self.mirror_phase;
            return self.shift(from, cfg.target_offset, mirror, Action::Lock);
        }
        Action::Lock
    }

    fn within_hold(&self, c: f64, cfg: &ControllerConfig) -> bool {
        let slack = (cfg.c_max - cfg.threshold) + cfg.hold_band;
        if self.offset_applied {
            let expected = cfg.c_max * (0.5 * cfg.target_offset).cos().powi(2);
            (c - expected).abs() <= slack
        } else {
            c >= cfg.threshold - cfg.hold_band
        }
    }
}

/// Sign decision after the probe window.
///
/// When the estimated distance to the maximum is at least the probe step the
/// rule is simply "counts went up". Closer in, the probe can overshoot the
/// maximum and lower the counts even on the ascending side, so the
/// post-probe estimate is compared with the probe step instead.
fn probe_says_ascending(p: &Probe, counts_after: f64, cfg: &ControllerConfig) -> bool {
    if p.dphi >= cfg.probe_step {
        counts_after > p.counts_before
    } else {
        estimate_correction(counts_after, cfg) < cfg.probe_step
    }
}

/// One closed-loop iteration: count a window on the plant, decide, actuate.
pub fn control_step(
    ctrl: &mut ControllerState,
    cfg: &ControllerConfig,
    plant: &mut PlantState,
) -> (Measurement, ControllerEvent) {
    let m = plant.measure();
    let mirror = plant.config().mirror;
    let event = ctrl.observe(m.t, m.counts as f64, cfg, &mirror);
    plant.set_mirror(ctrl.command());
    (m, event)
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub trace: Trace,
    pub events: Vec<ControllerEvent>,
    /// First window after which the controller was locked
    pub lock_window: Option<usize>,
}

impl ClosedLoopRun {
    /// Windows from the first lock on.
    pub fn locked_trace(&self) -> Option<Trace> {
        self.lock_window.map(|k| self.trace.tail(k + 1))
    }
}

pub fn run_closed_loop(
    plant: &mut PlantState,
    cfg: &ControllerConfig,
    duration: f64,
) -> Result<ClosedLoopRun> {
    cfg.validate()?;
    let dwell = plant.config().dwell;
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let windows = (duration / dwell).round().max(1.0) as usize;
    let mirror = plant.config().mirror;
    let mut ctrl = ControllerState::new(cfg, &mirror);
    plant.set_mirror(ctrl.command());
    let mut trace = Trace::new(dwell);
    let mut lock_window = None;
    for k in 0..windows {
        let (m, event) = control_step(&mut ctrl, cfg, plant);
        trace.push(m);
        if lock_window.is_none() && event.mode == Mode::Locked {
            lock_window = Some(k);
        }
    }
    Ok(ClosedLoopRun {
        trace,
        events: ctrl.events,
        lock_window,
    })
}

/// Open-loop reference: the mirror parked at `level` for the whole run.
pub fn run_free(plant: &mut PlantState, level: u8, duration: f64) -> Result<Trace> {
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration must be positive, got {duration}"
        )));
    }
    let dwell = plant.config().dwell;
    let windows = (duration / dwell).round().max(1.0) as usize;
    plant.set_mirror(MirrorCommand::from_level(level));
    let mut trace = Trace::new(dwell);
    for _ in 0..windows {
        trace.push(plant.measure());
    }
    Ok(trace)
}

pub const EVENTS_HEADER: &str = "t_s,mode,counts,estimated_dphi_rad,commanded_level";

pub fn write_events_csv<W: Write>(events: &[ControllerEvent], mut out: W) -> Result<()> {
    writeln!(out, "{EVENTS_HEADER}")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{},{}",
            sig9(e.t),
            e.mode.as_str(),
            e.counts,
            sig9(e.estimated_dphi),
            e.commanded_level
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{wrap_signed, SourceParams};
    use crate::plant::{DriftModel, PlantConfig};
    use approx::assert_relative_eq;

    fn unit_visibility_plant(phi: f64) -> PlantState {
        PlantState::new(PlantConfig {
            source: SourceParams {
                visibility: 1.0,
                pair_rate: 800.0,
                ..SourceParams::default()
            },
            drift: DriftModel::none(),
            initial_phase: Some(phi),
            ..PlantConfig::default()
        })
        .unwrap()
    }

    fn exact_cfg() -> ControllerConfig {
        ControllerConfig {
            threshold: 800.0,
            deadband: false,
            ..ControllerConfig::for_max_counts(800.0, 1.0)
        }
    }

    /// Drives the controller with the expected counts instead of Poisson draws.
    fn noiseless_step(
        ctrl: &mut ControllerState,
        cfg: &ControllerConfig,
        plant: &mut PlantState,
    ) -> ControllerEvent {
        let c = plant.mean_counts();
        let e = ctrl.observe(plant.time(), c, cfg, &plant.config().mirror.clone());
        plant.set_mirror(ctrl.command());
        plant.step_drift(plant.config().dwell);
        e
    }

    #[test]
    fn estimator_closed_forms() {
        let cfg = ControllerConfig::for_max_counts(800.0, 0.78);
        let t = cfg.threshold;
        assert_eq!(estimate_correction(t, &cfg), 0.0);
        assert_relative_eq!(
            estimate_correction(0.5 * t, &cfg),
            0.5 * PI,
            max_relative = 1e-14
        );
        assert_relative_eq!(estimate_correction(0.0, &cfg), PI, max_relative = 1e-15);
        assert_eq!(estimate_correction(2.0 * t, &cfg), 0.0);
    }

    #[test]
    fn default_thresholds() {
        let cfg = ControllerConfig::for_max_counts(800.0, 0.78);
        assert_relative_eq!(cfg.threshold, 800.0 - 800f64.sqrt());
        assert_relative_eq!(cfg.half_threshold(), 0.5 * cfg.threshold);
        assert_relative_eq!(cfg.hold_band, 2.0 * 800f64.sqrt());
        assert!(cfg.validate().is_ok());
        assert!(ControllerConfig {
            threshold: 900.0,
            ..cfg
        }
        .validate()
        .is_err());
        assert!(ControllerConfig {
            probe_step: 1.0,
            ..cfg
        }
        .validate()
        .is_err());
        assert!(ControllerConfig {
            probe_step: 0.0,
            ..cfg
        }
        .validate()
        .is_err());
    }

    #[test]
    fn compensation_maps_floor_to_zero() {
        let cfg = ControllerConfig::for_max_counts(800.0, 0.78);
        assert_relative_eq!(cfg.compensate(800.0), 800.0, max_relative = 1e-12);
        assert!(cfg.compensate(cfg.fringe_floor()).abs() < 1e-9);
        let off = ControllerConfig {
            visibility_compensation: false,
            ..cfg
        };
        assert_eq!(off.compensate(123.0), 123.0);
        let unit = ControllerConfig::for_max_counts(800.0, 1.0);
        assert_eq!(unit.compensate(321.0), 321.0);
    }

    #[test]
    fn pi_start_shifts_once_then_locks() {
        let cfg = ControllerConfig::for_max_counts(800.0, 1.0);
        let mut plant = unit_visibility_plant(PI);
        let mirror = plant.config().mirror;
        let mut ctrl = ControllerState::new(&cfg, &mirror);
        // cancel the parked mirror phase so the plant starts at exactly π
        let park = ctrl.mirror_phase;
        plant = unit_visibility_plant(PI - park);
        plant.set_mirror(ctrl.command());
        let e1 = noiseless_step(&mut ctrl, &cfg, &mut plant);
        assert_eq!(e1.action, Action::PiShift);
        let e2 = noiseless_step(&mut ctrl, &cfg, &mut plant);
        assert_eq!(e2.mode, Mode::Locked);
        // π is not a whole number of levels; the residual is half a quantum at most
        assert!(
            plant.mean_counts() > 800.0 * (0.5 * 0.5 * mirror.phase_quantum()).cos().powi(2) - 1e-9
        );
    }

    #[test]
    fn locked_start_issues_no_command() {
        let cfg = ControllerConfig::for_max_counts(800.0, 0.78);
        let mirror = MirrorActuator::default();
        let mut ctrl = ControllerState::new(&cfg, &mirror);
        let level = ctrl.level;
        let e = ctrl.observe(0.0, 805.0, &cfg, &mirror);
        assert_eq!(e.mode, Mode::Locked);
        assert_eq!(e.action, Action::Lock);
        assert_eq!(ctrl.level, level);
    }

    #[test]
    fn quarter_wave_start_lands_within_one_quantum() {
        let cfg = exact_cfg();
        for phi0 in [1.5, -1.5, 1.0, -1.2, 0.3, -0.03] {
            let mut plant = unit_visibility_plant(0.0);
            let mirror = plant.config().mirror;
            let mut ctrl = ControllerState::new(&cfg, &mirror);
            plant = unit_visibility_plant(phi0 - ctrl.mirror_phase);
            plant.set_mirror(ctrl.command());
            let e1 = noiseless_step(&mut ctrl, &cfg, &mut plant);
            assert_eq!(e1.action, Action::Probe);
            assert_relative_eq!(e1.estimated_dphi, phi0.abs(), max_relative = 1e-9);
            let e2 = noiseless_step(&mut ctrl, &cfg, &mut plant);
            assert_eq!(e2.action, Action::Correct);
            let residual = wrap_signed(plant.effective_phase()).abs();
            assert!(
                residual <= 0.5 * mirror.phase_quantum() + 1e-12,
                "{phi0}: {residual}"
            );
        }
    }

    #[test]
    fn default_controller_from_quarter_wave() {
        // T below c_max biases the estimate; quantization decides the rest.
        let cfg = ControllerConfig::for_max_counts(800.0, 1.0);
        let mut plant = unit_visibility_plant(0.0);
        let mirror = plant.config().mirror;
        let mut ctrl = ControllerState::new(&cfg, &mirror);
        plant = unit_visibility_plant(0.5 * PI - ctrl.mirror_phase);
        plant.set_mirror(ctrl.command());
        assert_eq!(
            noiseless_step(&mut ctrl, &cfg, &mut plant).action,
            Action::Probe
        );
        assert_eq!(
            noiseless_step(&mut ctrl, &cfg, &mut plant).action,
            Action::Correct
        );
        let residual = wrap_signed(plant.effective_phase()).abs();
        assert!(residual <= mirror.phase_quantum(), "{residual}");
        assert_eq!(
            noiseless_step(&mut ctrl, &cfg, &mut plant).mode,
            Mode::Locked
        );
    }

    #[test]
    fn offset_is_applied_after_lock_and_removed_on_reacquire() {
        let cfg = ControllerConfig {
            target_offset: PI,
            ..ControllerConfig::for_max_counts(800.0, 0.78)
        };
        let mirror = MirrorActuator::default();
        let mut ctrl = ControllerState::new(&cfg, &mirror);
        let start = ctrl.mirror_phase;
        ctrl.observe(0.0, 800.0, &cfg, &mirror);
        assert_eq!(ctrl.mode, Mode::Locked);
        assert!(
            (wrap_signed(ctrl.mirror_phase - start - PI)).abs()
                <= 0.5 * mirror.phase_quantum() + 1e-12
        );
        // fringe minimum counts are what an offset lock expects
        let floor = cfg.fringe_floor();
        ctrl.observe(2.0, floor, &cfg, &mirror);
        assert_eq!(ctrl.mode, Mode::Locked);
        ctrl.observe(4.0, 800.0, &cfg, &mirror);
        let e = ctrl.observe(6.0, 800.0, &cfg, &mirror);
        assert_eq!(e.action, Action::Reacquire);
        assert_eq!(ctrl.mode, Mode::Acquiring);
    }

    #[test]
    fn lock_requires_two_low_windows_to_drop() {
        let cfg = ControllerConfig::for_max_counts(800.0, 0.78);
        let mirror = MirrorActuator::default();
        let mut ctrl = ControllerState::new(&cfg, &mirror);
        ctrl.observe(0.0, 800.0, &cfg, &mirror);
        let low = cfg.threshold - cfg.hold_band - 1.0;
        assert_eq!(ctrl.observe(2.0, low, &cfg, &mirror).mode, Mode::Locked);
        assert_eq!(ctrl.observe(4.0, 800.0, &cfg, &mirror).mode, Mode::Locked);
        assert_eq!(ctrl.observe(6.0, low, &cfg, &mirror).mode, Mode::Locked);
        assert_ne!(ctrl.observe(8.0, low, &cfg, &mirror).mode, Mode::Locked);
    }

    #[test]
    fn rewrap_keeps_mirror_in_range() {
        let cfg = ControllerConfig {
            initial_level: 250,
            ..ControllerConfig::for_max_counts(800.0, 0.78)
        };
        let mirror = MirrorActuator::default();
        let mut ctrl = ControllerState::new(&cfg, &mirror);
        let before = ctrl.mirror_phase;
        let e = ctrl.observe(0.0, 10.0, &cfg, &mirror);
        assert_eq!(e.action, Action::PiShift);
        assert!(ctrl.mirror_phase < before);
        assert!(
            wrap_signed(ctrl.mirror_phase - before - PI).abs()
                <= 0.5 * mirror.phase_quantum() + 1e-12
        );

        // a mirror shorter than one turn cannot wrap
        let short = MirrorActuator {
            stroke: 100e-9,
            ..mirror
        };
        let mut ctrl = ControllerState::new(&cfg, &short);
        let e = ctrl.observe(0.0, 10.0, &cfg, &short);
        assert_eq!(e.action, Action::LockLoss);
    }

    #[test]
    fn events_csv_layout() {
        let e = ControllerEvent {
            t: 4.0,
            mode: Mode::Probing,
            counts: 500,
            estimated_dphi: 1.25,
            commanded_level: 130,
            action: Action::Probe,
        };
        let mut buf = Vec::new();
        write_events_csv(&[e], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{EVENTS_HEADER}\n4,probing,500,1.25,130\n")
        );
    }
}
