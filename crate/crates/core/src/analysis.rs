//! Count statistics, fringe fitting and normalized spectra.

use std::io::Write;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::sig9;
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub samples: usize,
    pub mean: f64,
    /// Population standard deviation
    pub std: f64,
    /// `√mean`, the shot-noise floor
    pub poisson_std: f64,
    /// `std / poisson_std`
    pub ratio: f64,
}

pub fn trace_stats(trace: &Trace) -> Result<TraceStats> {
    count_stats(&trace.counts())
}

pub fn count_stats(counts: &[f64]) -> Result<TraceStats> {
    if counts.len() < 2 {
        return Err(Error::Trace(format!(
            "statistics need at least 2 samples, got {}",
            counts.len()
        )));
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let std = (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n).sqrt();
    let poisson_std = mean.max(0.0).sqrt();
    Ok(TraceStats {
        samples: counts.len(),
        mean,
        std,
        poisson_std,
        ratio: std / poisson_std,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DftOptions {
    /// Remove the mean before transforming so the DC bin is empty
    pub subtract_mean: bool,
    pub window: Window,
}

impl Default for DftOptions {
    fn default() -> Self {
        Self {
            subtract_mean: true,
            window: Window::Rectangular,
        }
    }
}

/// DFT magnitudes over all `N` bins, `k = 0..N`, at `f_k = k / (N·dwell)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    /// Scaled so the squares sum to 1, or all zero when degenerate
    pub magnitudes: Vec<f64>,
    /// Input had no power to normalize (e.g. a constant trace)
    pub degenerate: bool,
    pub dwell: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.dwell
    }

    /// Physical frequency of bin `k`; bins above `N/2` are the negative
    /// frequencies of the real input.
    pub fn folded_frequency(&self, k: usize) -> f64 {
        let n = self.len();
        k.min(n - k) as f64 / (n as f64 * self.dwell)
    }

    /// Bin with the largest magnitude among `1..=N/2`.
    pub fn peak_bin(&self) -> Option<usize> {
        (1..=self.len() / 2).max_by(|&a, &b| self.magnitudes[a].total_cmp(&self.magnitudes[b]))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{SPECTRUM_HEADER}")?;
        for (f, m) in self.frequencies.iter().zip(&self.magnitudes) {
            writeln!(out, "{},{}", sig9(*f), sig9(*m))?;
        }
        Ok(())
    }
}

pub const SPECTRUM_HEADER: &str = "f_hz,magnitude_normalized";

pub fn dft(trace: &Trace) -> Result<Spectrum> {
    dft_with(trace, DftOptions::default())
}

pub fn dft_with(trace: &Trace, opts: DftOptions) -> Result<Spectrum> {
    trace.check_uniform()?;
    spectrum_of(&trace.counts(), trace.dwell, opts)
}

/// Spectrum of uniformly spaced samples.
pub fn spectrum_of(values: &[f64], dwell: f64, opts: DftOptions) -> Result<Spectrum> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Trace(format!(
            "spectrum needs at least 2 samples, got {n}"
        )));
    }
    if !(dwell.is_finite() && dwell > 0.0) {
        return Err(Error::Trace(format!("dwell must be positive, got {dwell}")));
    }
    let mean = if opts.subtract_mean {
        values.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let x: Vec<f64> = values
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean) * window_weight(opts.window, k, n))
        .collect();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::<f64>::new()
        .plan_fft_forward(n)
        .process(&mut buf);

    let energy: f64 = x.iter().map(|v| v * v).sum();
    let spectral: f64 = buf.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    // Parseval: Σ x² = Σ |X|² / N. A violation means the transform is broken.
    let scale = energy.abs().max(spectral.abs()).max(f64::MIN_POSITIVE);
    if (energy - spectral).abs() > 1e-9 * scale {
        return Err(Error::Trace(format!(
            "Parseval check failed: time-domain energy {energy:e}, spectral energy {spectral:e}"
        )));
    }

    let frequencies = (0..n).map(|k| k as f64 / (n as f64 * dwell)).collect();
    let total: f64 = buf.iter().map(|z| z.norm_sqr()).sum();
    // Exact zero input is the only truly degenerate case; after mean removal a
    // constant trace leaves round-off at most.
    let degenerate =
        total <= 1e-24 * (values.iter().map(|v| v * v).sum::<f64>()).max(f64::MIN_POSITIVE);
    let magnitudes = if degenerate {
        vec![0.0; n]
    } else {
        let norm = total.sqrt();
        buf.iter().map(|z| z.norm() / norm).collect()
    };
    Ok(Spectrum {
        frequencies,
        magnitudes,
        degenerate,
        dwell,
    })
}

fn window_weight(window: Window, k: usize, n: usize) -> f64 {
    match window {
        Window::Rectangular => 1.0,
        Window::Hann => {
            let s = (std::f64::consts::PI * k as f64 / n as f64).sin();
            s * s
        }
    }
}

/// Share of the normalized power at physical frequencies `0 < f ≤ cutoff`.
pub fn low_frequency_power(spectrum: &Spectrum, cutoff: f64) -> f64 {
    // A bin sitting exactly on the cutoff must not be lost to round-off.
    let slack = 1e-9 / (spectrum.len() as f64 * spectrum.dwell);
    (0..spectrum.len())
        .filter(|&k| {
            let f = spectrum.folded_frequency(k);
            f > 0.0 && f <= cutoff + slack
        })
        .map(|k| spectrum.magnitudes[k].powi(2))
        .sum()
}

/// `a + b cos(φ + φ₀)` fitted to a phase scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    /// `b / a`
    pub visibility: f64,
    /// `b`
    pub amplitude: f64,
    /// `a`
    pub mean: f64,
    /// `φ₀` [rad]
    pub phase_offset: f64,
    /// rms of the fit residual
    pub residual_rms: f64,
}

pub fn fit_fringe(scan: &[(f64, f64)]) -> Result<FringeFit> {
    if scan.len() < 5 {
        return Err(Error::DegenerateFit(format!(
            "need at least 5 points, got {}",
            scan.len()
        )));
    }
    let (lo, hi) = scan
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(p, _)| {
            (lo.min(p), hi.max(p))
        });
    if hi - lo < std::f64::consts::PI {
        return Err(Error::DegenerateFit(format!(
            "scan spans {:.3} rad, need at least π",
            hi - lo
        )));
    }
    // Linear least squares in the basis {1, cos φ, sin φ}.
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for &(phi, y) in scan {
        let row = [1.0, phi.cos(), phi.sin()];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
            aty[r] += row[r] * y;
        }
    }
    let [a, p, q] =
        solve3(ata, aty).ok_or_else(|| Error::DegenerateFit("singular normal equations".into()))?;
    if !(a > 0.0) {
        return Err(Error::DegenerateFit(format!("non-positive mean level {a}")));
    }
    let b = p.hypot(q);
    let residual_rms = (scan
        .iter()
        .map(|&(phi, y)| (y - (a + p * phi.cos() + q * phi.sin())).powi(2))
        .sum::<f64>()
        / scan.len() as f64)
        .sqrt();
    Ok(FringeFit {
        visibility: b / a,
        amplitude: b,
        mean: a,
        phase_offset: (-q).atan2(p),
        residual_rms,
    })
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve3(mut m: [[f64; 3]; 3], mut v: [f64; 3]) -> Option<[f64; 3]> {
    let scale = m.iter().flatten().fold(0.0_f64, |s, x| s.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[pivot][col].abs() <= 1e-12 * scale {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for c in col..3 {
                m[r][c] -= f * m[col][c];
            }
            v[r] -= f * v[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| m[r][c] * x[c]).sum();
        x[r] = (v[r] - s) / m[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceSample;
    use approx::assert_relative_eq;
    use std::f64::consts::{PI, TAU};

    fn trace_of(counts: &[u64], dwell: f64) -> Trace {
        let mut t = Trace::new(dwell);
        for (k, &c) in counts.iter().enumerate() {
            t.push(TraceSample {
                t: k as f64 * dwell,
                counts: c,
                phi_drift: None,
                phi_mirror: None,
                mu: None,
            });
        }
        t
    }

    #[test]
    fn stats_by_hand() {
        let s = trace_stats(&trace_of(&[0, 2], 2.0)).unwrap();
        assert_eq!((s.mean, s.std, s.ratio), (1.0, 1.0, 1.0));
        let s = trace_stats(&trace_of(&[646; 10], 2.0)).unwrap();
        assert_eq!(s.std, 0.0);
        assert_relative_eq!(s.poisson_std, 646f64.sqrt());
        assert!((s.poisson_std - 25.42).abs() < 0.01);
        assert!(trace_stats(&trace_of(&[5], 2.0)).is_err());
    }

    #[test]
    fn constant_trace_is_degenerate() {
        let s = dft(&trace_of(&[646; 16], 2.0)).unwrap();
        assert!(s.degenerate);
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
        assert_eq!(low_frequency_power(&s, s.nyquist()), 0.0);
    }

    #[test]
    fn bin_centred_sinusoid() {
        let n = 64;
        let k0 = 5;
        let counts: Vec<u64> = (0..n)
            .map(|k| {
                (1000.0 + 100.0 * (TAU * k0 as f64 * k as f64 / n as f64).cos()).round() as u64
            })
            .collect();
        // rounding to integers leaves a little broadband power
        let s = dft(&trace_of(&counts, 2.0)).unwrap();
        assert!((s.magnitudes[k0].powi(2) - 0.5).abs() < 1e-3);
        assert!((s.magnitudes[n - k0].powi(2) - 0.5).abs() < 1e-3);
        assert_eq!(s.peak_bin(), Some(k0));
        assert_relative_eq!(s.frequencies[k0], k0 as f64 / (n as f64 * 2.0));

        let exact: Vec<f64> = (0..n)
            .map(|k| (TAU * k0 as f64 * k as f64 / n as f64).sin())
            .collect();
        let s = spectrum_of(&exact, 2.0, DftOptions::default()).unwrap();
        assert_relative_eq!(s.magnitudes[k0].powi(2), 0.5, max_relative = 1e-12);
        assert_relative_eq!(s.magnitudes[n - k0].powi(2), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn low_frequency_power_limits() {
        let values: Vec<f64> = (0..100).map(|k| ((k * 37) % 11) as f64).collect();
        let s = spectrum_of(&values, 2.0, DftOptions::default()).unwrap();
        assert_relative_eq!(
            low_frequency_power(&s, s.nyquist()),
            1.0,
            max_relative = 1e-12
        );
        assert_eq!(low_frequency_power(&s, 0.5 * s.frequencies[1]), 0.0);
    }

    #[test]
    fn raw_mode_keeps_dc() {
        let s = spectrum_of(
            &[3.0, 3.0, 3.0, 3.0],
            1.0,
            DftOptions {
                subtract_mean: false,
                window: Window::Rectangular,
            },
        )
        .unwrap();
        assert!(!s.degenerate);
        assert_relative_eq!(s.magnitudes[0], 1.0);
        let sum: f64 = s.magnitudes.iter().map(|m| m * m).sum();
        assert_relative_eq!(sum, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn hann_window_normalizes() {
        let values: Vec<f64> = (0..50)
            .map(|k| (k as f64 * 0.37).sin() + 0.1 * k as f64)
            .collect();
        let s = spectrum_of(
            &values,
            2.0,
            DftOptions {
                subtract_mean: true,
                window: Window::Hann,
            },
        )
        .unwrap();
        let sum: f64 = s.magnitudes.iter().map(|m| m * m).sum();
        assert_relative_eq!(sum, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn non_uniform_trace_is_rejected() {
        let mut t = trace_of(&[1, 2, 3], 2.0);
        t.samples[2].t = 5.0;
        assert!(dft(&t).is_err());
    }

    #[test]
    fn exact_fringe() {
        let scan: Vec<(f64, f64)> = (0..30)
            .map(|k| {
                let phi = k as f64 * PI / 4.0;
                (phi, 450.0 + 351.0 * (phi + 0.3).cos())
            })
            .collect();
        let f = fit_fringe(&scan).unwrap();
        assert_relative_eq!(f.visibility, 0.78, max_relative = 1e-12);
        assert_relative_eq!(f.mean, 450.0, max_relative = 1e-12);
        assert_relative_eq!(f.phase_offset, 0.3, max_relative = 1e-10);
        assert!(f.residual_rms < 1e-9);

        let flat: Vec<(f64, f64)> = scan.iter().map(|&(p, _)| (p, 450.0)).collect();
        assert!(fit_fringe(&flat).unwrap().visibility < 1e-12);
    }

    #[test]
    fn degenerate_scans() {
        let short: Vec<(f64, f64)> = (0..4).map(|k| (k as f64, 1.0)).collect();
        assert!(matches!(fit_fringe(&short), Err(Error::DegenerateFit(_))));
        let narrow: Vec<(f64, f64)> = (0..10).map(|k| (0.1 * k as f64, 1.0)).collect();
        assert!(fit_fringe(&narrow).is_err());
        // every point at the same phase modulo 2π
        let aliased: Vec<(f64, f64)> = (0..6).map(|k| (TAU * k as f64, 5.0)).collect();
        assert!(fit_fringe(&aliased).is_err());
    }
}
