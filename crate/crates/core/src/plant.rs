//! Simulated interferometer: drifting phase, mirror phase and photon counting.
//!
//! The phase seen by the coincidence detectors is `φ₀(t) + φ_mirror`, with
//!
//! ```text
//! φ₀(t) = φ_init + x(t) + Σ A_k sin(2π f_k t + θ_k)
//! ```
//!
//! where `x` is the stochastic part of the drift. Drift and counting draw from
//! two independent ChaCha streams derived from one seed, so runs with the same
//! seed see the same drift no matter how many windows they count.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mirror::{MirrorActuator, MirrorCommand};
use crate::optics::{mean_coincidences, SourceParams};

const DRIFT_STREAM: u64 = 1;
const COUNT_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// Brownian phase diffusion; `amplitude` is the rms spread after one `correlation_time`.
    RandomWalk,
    /// Ornstein-Uhlenbeck; `amplitude` is the stationary std.
    OuProcess,
    /// Deterministic sinusoids only.
    SinusoidalMix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    /// [Hz]
    pub frequency: f64,
    /// [rad]
    pub amplitude: f64,
    /// Initial phase [rad]; drawn uniformly from the drift stream when absent
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftModel {
    pub kind: DriftKind,
    /// [s]
    pub correlation_time: f64,
    /// [rad]
    pub amplitude: f64,
    pub sinusoids: Vec<Sinusoid>,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            kind: DriftKind::OuProcess,
            correlation_time: 100.0,
            amplitude: 1.0,
            sinusoids: vec![
                Sinusoid {
                    frequency: 0.5e-3,
                    amplitude: 0.8,
                    phase: None,
                },
                Sinusoid {
                    frequency: 1.0e-3,
                    amplitude: 0.8,
                    phase: None,
                },
            ],
        }
    }
}

impl DriftModel {
    /// A phase that never moves.
    pub fn none() -> Self {
        Self {
            kind: DriftKind::SinusoidalMix,
            correlation_time: 1.0,
            amplitude: 0.0,
            sinusoids: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.correlation_time.is_finite() && self.correlation_time > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "correlation_time must be positive, got {}",
                self.correlation_time
            )));
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "drift amplitude must be non-negative, got {}",
                self.amplitude
            )));
        }
        for s in &self.sinusoids {
            if !(s.frequency.is_finite() && s.frequency > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "sinusoid frequency must be positive, got {}",
                    s.frequency
                )));
            }
            if !s.amplitude.is_finite() || s.phase.is_some_and(|p| !p.is_finite()) {
                return Err(Error::InvalidParameter(
                    "non-finite sinusoid parameter".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub source: SourceParams,
    pub drift: DriftModel,
    pub mirror: MirrorActuator,
    /// Counting window [s]
    pub dwell: f64,
    /// Longest drift integration step [s]
    pub max_substep: f64,
    /// `φ_init` [rad]; drawn uniformly when absent
    pub initial_phase: Option<f64>,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            source: SourceParams::default(),
            drift: DriftModel::default(),
            mirror: MirrorActuator::default(),
            dwell: 2.0,
            max_substep: 1.0,
            initial_phase: None,
            seed: 1,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.drift.validate()?;
        self.mirror.validate()?;
        if !(self.dwell.is_finite() && self.dwell > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dwell must be positive, got {}",
                self.dwell
            )));
        }
        if !(self.max_substep.is_finite() && self.max_substep > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "max_substep must be positive, got {}",
                self.max_substep
            )));
        }
        if self.initial_phase.is_some_and(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(
                "initial_phase must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// One counting window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Window start [s]
    pub t: f64,
    pub counts: u64,
    /// Expected counts over the window
    pub mu: f64,
    /// `φ₀` at the window start
    pub phi_drift: f64,
    pub phi_mirror: f64,
}

#[derive(Debug, Clone)]
pub struct PlantState {
    config: PlantConfig,
    t: f64,
    /// Stochastic drift component
    x: f64,
    phi_init: f64,
    sinusoid_phases: Vec<f64>,
    phi_mirror: f64,
    level: u8,
    drift_rng: ChaCha20Rng,
    count_rng: ChaCha20Rng,
}

impl PlantState {
    pub fn new(config: PlantConfig) -> Result<Self> {
        config.validate()?;
        let mut drift_rng = ChaCha20Rng::seed_from_u64(config.seed);
        drift_rng.set_stream(DRIFT_STREAM);
        let mut count_rng = ChaCha20Rng::seed_from_u64(config.seed);
        count_rng.set_stream(COUNT_STREAM);
        let phi_init = match config.initial_phase {
            Some(p) => p,
            None => drift_rng.random::<f64>() * TAU,
        };
        let sinusoid_phases = config
            .drift
            .sinusoids
            .iter()
            .map(|s| s.phase.unwrap_or_else(|| drift_rng.random::<f64>() * TAU))
            .collect();
        // Start the OU component in its stationary distribution.
        let x = match config.drift.kind {
            DriftKind::OuProcess => {
                config.drift.amplitude * drift_rng.sample::<f64, _>(StandardNormal)
            }
            _ => 0.0,
        };
        Ok(Self {
            config,
            t: 0.0,
            x,
            phi_init,
            sinusoid_phases,
            phi_mirror: 0.0,
            level: 0,
            drift_rng,
            count_rng,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// `φ₀(t)`.
    pub fn phi_drift(&self) -> f64 {
        let periodic: f64 = self
            .config
            .drift
            .sinusoids
            .iter()
            .zip(&self.sinusoid_phases)
            .map(|(s, p)| s.amplitude * (TAU * s.frequency * self.t + p).sin())
            .sum();
        self.phi_init + self.x + periodic
    }

    pub fn phi_mirror(&self) -> f64 {
        self.phi_mirror
    }

    pub fn mirror_level(&self) -> u8 {
        self.level
    }

    /// Phase the detectors see.
    pub fn effective_phase(&self) -> f64 {
        self.phi_drift() + self.phi_mirror
    }

    pub fn mean_counts(&self) -> f64 {
        mean_coincidences(
            &self.config.source,
            self.effective_phase(),
            self.config.dwell,
        )
    }

    pub fn set_mirror(&mut self, cmd: MirrorCommand) {
        self.level = cmd.quantized_level;
        self.phi_mirror = self.config.mirror.command_to_phase(cmd);
    }

    /// Advances time by `dt` in sub-steps no longer than `max_substep`.
    pub fn step_drift(&mut self, dt: f64) {
        if !(dt > 0.0) {
            return;
        }
        let n = (dt / self.config.max_substep).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        for _ in 0..n {
            self.advance(h);
        }
    }

    fn advance(&mut self, h: f64) {
        let d = &self.config.drift;
        match d.kind {
            DriftKind::OuProcess if d.amplitude > 0.0 => {
                let a = (-h / d.correlation_time).exp();
                let n: f64 = self.drift_rng.sample(StandardNormal);
                self.x = self.x * a + d.amplitude * (1.0 - a * a).sqrt() * n;
            }
            DriftKind::RandomWalk if d.amplitude > 0.0 => {
                let n: f64 = self.drift_rng.sample(StandardNormal);
                self.x += d.amplitude * (h / d.correlation_time).sqrt() * n;
            }
            _ => {}
        }
        self.t += h;
    }

    /// Counts one dwell window and advances the drift across it.
    ///
    /// The Poisson mean is the rate averaged over the window (trapezoid rule on
    /// the drift sub-steps).
    pub fn measure(&mut self) -> Measurement {
        let dwell = self.config.dwell;
        let t = self.t;
        let phi_drift = self.phi_drift();
        let n = (dwell / self.config.max_substep).ceil().max(1.0) as usize;
        let h = dwell / n as f64;
        let mut acc = 0.5 * self.mean_counts();
        for k in 0..n {
            self.advance(h);
            let w = if k + 1 == n { 0.5 } else { 1.0 };
            acc += w * self.mean_counts();
        }
        let mu = acc / n as f64;
        Measurement {
            t,
            counts: sample_poisson(&mut self.count_rng, mu),
            mu,
            phi_drift,
            phi_mirror: self.phi_mirror,
        }
    }
}

/// Exact Poisson draw; `mu <= 0` gives 0.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, mu: f64) -> u64 {
    if !(mu > 0.0) {
        return 0;
    }
    let d = Poisson::new(mu).expect("positive finite Poisson mean");
    d.sample(rng) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn still(phase: f64) -> PlantConfig {
        PlantConfig {
            drift: DriftModel::none(),
            initial_phase: Some(phase),
            ..PlantConfig::default()
        }
    }

    #[test]
    fn no_drift_means_constant_phase() {
        let mut p = PlantState::new(still(0.3)).unwrap();
        for _ in 0..10 {
            p.measure();
        }
        assert_eq!(p.phi_drift(), 0.3);
        assert_relative_eq!(p.time(), 20.0, max_relative = 1e-12);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut p = PlantState::new(PlantConfig {
                seed: 42,
                ..PlantConfig::default()
            })
            .unwrap();
            (0..50)
                .map(|_| {
                    let m = p.measure();
                    (m.counts, m.phi_drift)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
        let mut other = PlantState::new(PlantConfig {
            seed: 43,
            ..PlantConfig::default()
        })
        .unwrap();
        let first: Vec<_> = (0..50).map(|_| other.measure().counts).collect();
        assert_ne!(first, run().iter().map(|r| r.0).collect::<Vec<_>>());
    }

    #[test]
    fn drift_does_not_depend_on_counting() {
        let cfg = PlantConfig {
            seed: 7,
            ..PlantConfig::default()
        };
        let mut a = PlantState::new(cfg.clone()).unwrap();
        let mut b = PlantState::new(cfg).unwrap();
        b.set_mirror(MirrorCommand::from_level(200));
        for _ in 0..20 {
            let ma = a.measure();
            let mb = b.measure();
            assert_eq!(ma.phi_drift, mb.phi_drift);
        }
    }

    #[test]
    fn mirror_phase_composition() {
        let mut p = PlantState::new(still(0.1)).unwrap();
        p.set_mirror(MirrorCommand::from_level(0));
        assert_eq!(p.phi_mirror(), 0.0);
        p.set_mirror(MirrorCommand::from_level(128));
        let expected = 2.0 * PI * 2.0 * (128.0 / 255.0 * 600e-9) / 532e-9;
        assert_relative_eq!(p.phi_mirror(), expected, max_relative = 1e-12);
        assert_eq!(p.effective_phase(), p.phi_drift() + p.phi_mirror());
        assert_eq!(p.mirror_level(), 128);
    }

    #[test]
    fn full_wave_mirror_leaves_mean_unchanged() {
        // stroke chosen so one level moves the path by exactly one wavelength
        let cfg = PlantConfig {
            mirror: MirrorActuator {
                stroke: 255.0 * 266e-9,
                wavelength: 532e-9,
                reflection_factor: 2.0,
            },
            ..still(0.4)
        };
        let mut p = PlantState::new(cfg).unwrap();
        let m0 = p.mean_counts();
        p.set_mirror(MirrorCommand::from_level(1));
        assert_relative_eq!(p.phi_mirror(), 2.0 * PI, max_relative = 1e-12);
        assert_relative_eq!(p.mean_counts(), m0, max_relative = 1e-12);
    }

    #[test]
    fn dark_fringe_gives_zero_counts() {
        let cfg = PlantConfig {
            source: SourceParams {
                visibility: 1.0,
                ..SourceParams::default()
            },
            ..still(PI)
        };
        let mut p = PlantState::new(cfg).unwrap();
        for _ in 0..100 {
            assert_eq!(p.measure().counts, 0);
        }
    }

    #[test]
    fn substeps_cover_the_window() {
        let cfg = PlantConfig {
            dwell: 2.5,
            max_substep: 1.0,
            ..PlantConfig::default()
        };
        let mut p = PlantState::new(cfg).unwrap();
        let m = p.measure();
        assert_eq!(m.t, 0.0);
        assert_relative_eq!(p.time(), 2.5, max_relative = 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PlantState::new(PlantConfig {
            dwell: 0.0,
            ..PlantConfig::default()
        })
        .is_err());
        let mut bad = PlantConfig::default();
        bad.drift.correlation_time = -1.0;
        assert!(PlantState::new(bad).is_err());
        let mut bad = PlantConfig::default();
        bad.drift.sinusoids[0].frequency = 0.0;
        assert!(PlantState::new(bad).is_err());
    }
}
