//! Beam-splitter interference of the path-entangled pair.
//!
//! Input state `(|ℓ⟩_A|r⟩_B - e^{iφ}|r⟩_A|ℓ⟩_B)/√2`. Each photon meets the
//! symmetric beam splitter `ℓ → (ℓ′ + i r′)/√2`, `r → (i ℓ′ + r′)/√2`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output port of the beam splitter on one side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    /// ℓ′
    Left,
    /// r′
    Right,
}

impl Port {
    pub const ALL: [Port; 2] = [Port::Left, Port::Right];

    fn slot(self) -> usize {
        match self {
            Port::Left => 0,
            Port::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntangledInput {
    phi: f64,
}

impl EntangledInput {
    /// Relative phase reduced to `[0, 2π)`.
    pub fn new(phi: f64) -> Result<Self> {
        if !phi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "phase must be finite, got {phi}"
            )));
        }
        Ok(Self {
            phi: wrap_phase(phi),
        })
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// `phi` reduced to `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can return TAU itself for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// `phi` reduced to `(-π, π]`.
pub fn wrap_signed(phi: f64) -> f64 {
    let r = wrap_phase(phi);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Two-photon output amplitudes indexed by (A-side port, B-side port).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhotonState {
    amplitudes: [[Complex64; 2]; 2],
}

impl TwoPhotonState {
    pub fn amplitude(&self, a: Port, b: Port) -> Complex64 {
        self.amplitudes[a.slot()][b.slot()]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().flatten().map(|z| z.norm_sqr()).sum()
    }
}

pub fn bs_transform(input: EntangledInput) -> TwoPhotonState {
    let e = Complex64::from_polar(1.0, input.phi);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::i();
    let k = 0.5 * FRAC_1_SQRT_2;
    let sum = (one + e) * k;
    let diff = i * (one - e) * k;
    TwoPhotonState {
        amplitudes: [[diff, sum], [-sum, diff]],
    }
}

/// Probability of one photon in `port_a` on side A and one in `port_b` on side B.
pub fn coincidence_probability(state: &TwoPhotonState, port_a: Port, port_b: Port) -> f64 {
    state.amplitude(port_a, port_b).norm_sqr()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    /// Generated pairs per second reaching the detectors
    pub pair_rate: f64,
    /// Fringe contrast in `[0, 1]`
    pub visibility: f64,
    /// Signal/idler wavelength [m]
    pub wavelength: f64,
    pub pump_wavelength: f64,
    pub filter_bandwidth: f64,
    /// Flat accidental coincidence rate [1/s]
    pub accidental_rate: f64,
}

impl Default for SourceParams {
    fn default() -> Self {
        Self {
            // 449.4 counts per quarter of a 2 s window
            pair_rate: 898.8,
            visibility: 0.78,
            wavelength: 532e-9,
            pump_wavelength: 266e-9,
            filter_bandwidth: 5e-9,
            accidental_rate: 0.0,
        }
    }
}

impl SourceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pair_rate.is_finite() && self.pair_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pair_rate must be positive, got {}",
                self.pair_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(Error::InvalidParameter(format!(
                "visibility must lie in [0, 1], got {}",
                self.visibility
            )));
        }
        for (name, v) in [
            ("wavelength", self.wavelength),
            ("pump_wavelength", self.pump_wavelength),
            ("filter_bandwidth", self.filter_bandwidth),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.accidental_rate.is_finite() && self.accidental_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "accidental_rate must be non-negative, got {}",
                self.accidental_rate
            )));
        }
        Ok(())
    }

    /// Expected count at the fringe maximum in one window.
    pub fn max_counts(&self, dwell: f64) -> f64 {
        mean_coincidences(self, 0.0, dwell)
    }
}

/// Expected coincidences in a window: `(N₀·dwell/4)(1 + v cos φ)` plus accidentals.
pub fn mean_coincidences(params: &SourceParams, phi: f64, dwell: f64) -> f64 {
    0.25 * params.pair_rate * dwell * (1.0 + params.visibility * phi.cos())
        + params.accidental_rate * dwell
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_phase_is_all_cross_ports() {
        let s = bs_transform(EntangledInput::new(0.0).unwrap());
        assert_eq!(
            s.amplitude(Port::Left, Port::Left),
            Complex64::new(0.0, 0.0)
        );
        assert_eq!(
            s.amplitude(Port::Right, Port::Right),
            Complex64::new(0.0, 0.0)
        );
        assert_relative_eq!(
            coincidence_probability(&s, Port::Left, Port::Right),
            0.5,
            max_relative = 1e-15
        );
    }

    #[test]
    fn pi_phase_is_all_same_ports() {
        let s = bs_transform(EntangledInput::new(PI).unwrap());
        assert!(coincidence_probability(&s, Port::Left, Port::Right) < 1e-30);
        assert!(coincidence_probability(&s, Port::Right, Port::Left) < 1e-30);
        assert_relative_eq!(
            coincidence_probability(&s, Port::Left, Port::Left),
            0.5,
            max_relative = 1e-15
        );
    }

    #[test]
    fn quarter_phase() {
        let s = bs_transform(EntangledInput::new(0.5 * PI).unwrap());
        assert_relative_eq!(
            coincidence_probability(&s, Port::Left, Port::Right),
            0.25,
            max_relative = 1e-15
        );
    }

    #[test]
    fn phase_is_canonicalized() {
        assert_relative_eq!(EntangledInput::new(-0.5).unwrap().phi(), TAU - 0.5);
        assert_relative_eq!(EntangledInput::new(7.0).unwrap().phi(), 7.0 - TAU);
        assert!(EntangledInput::new(f64::NAN).is_err());
        assert_eq!(wrap_phase(-1e-300), 0.0);
        assert_relative_eq!(wrap_signed(1.5 * PI), -0.5 * PI);
        assert_relative_eq!(wrap_signed(PI), PI);
    }

    #[test]
    fn fringe_extremes_match_default_source() {
        let p = SourceParams::default();
        assert_relative_eq!(
            mean_coincidences(&p, 0.0, 2.0),
            449.4 * 1.78,
            max_relative = 1e-12
        );
        assert!((mean_coincidences(&p, 0.0, 2.0) - 800.0).abs() < 0.5);
        assert_relative_eq!(
            mean_coincidences(&p, PI, 2.0),
            449.4 * 0.22,
            max_relative = 1e-12
        );
        let v1 = SourceParams {
            visibility: 1.0,
            ..p
        };
        assert!(mean_coincidences(&v1, PI, 2.0).abs() < 1e-12);
    }

    #[test]
    fn source_validation() {
        let p = SourceParams::default();
        assert!(p.validate().is_ok());
        assert!(SourceParams {
            visibility: 1.2,
            ..p
        }
        .validate()
        .is_err());
        assert!(SourceParams {
            pair_rate: 0.0,
            ..p
        }
        .validate()
        .is_err());
        assert!(SourceParams {
            accidental_rate: -1.0,
            ..p
        }
        .validate()
        .is_err());
    }
}
