//! Spectra checked against a direct O(N²) transform, plus fit and statistics
//! properties.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::{PI, TAU};

use phaselock::analysis::{
    count_stats, dft, fit_fringe, low_frequency_power, spectrum_of, DftOptions, Window,
};
use phaselock::trace::{Trace, TraceSample};
use proptest::prelude::*;

fn naive_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let a = -TAU * (k * j % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

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
fn matches_direct_transform() {
    let x: Vec<f64> = (0..37)
        .map(|k| ((k * 7919) % 101) as f64 + 0.5 * (k as f64).sin())
        .collect();
    let raw = DftOptions {
        subtract_mean: false,
        window: Window::Rectangular,
    };
    let s = spectrum_of(&x, 2.0, raw).unwrap();
    let naive = naive_magnitudes(&x);
    let norm = naive.iter().map(|m| m * m).sum::<f64>().sqrt();
    for k in 0..x.len() {
        assert!((s.magnitudes[k] - naive[k] / norm).abs() < 1e-12, "bin {k}");
        assert!((s.frequencies[k] - k as f64 / (37.0 * 2.0)).abs() < 1e-15);
    }
}

#[test]
fn hand_computed_statistics() {
    let st = count_stats(&[4.0, 6.0, 5.0, 5.0]).unwrap();
    assert_eq!(st.mean, 5.0);
    assert!((st.std - 0.5f64.sqrt()).abs() < 1e-15);
    assert!((st.poisson_std - 5f64.sqrt()).abs() < 1e-15);
    assert!((st.ratio - (0.5f64 / 5.0).sqrt()).abs() < 1e-15);
}

#[test]
fn tone_lands_in_its_bin() {
    // 0.5 mHz sampled every 2 s over 2000 s: bin 1
    let n = 1000;
    let counts: Vec<u64> = (0..n)
        .map(|k| (500.0 + 100.0 * (TAU * 0.5e-3 * 2.0 * k as f64).sin()).round() as u64)
        .collect();
    let s = dft(&trace_of(&counts, 2.0)).unwrap();
    assert_eq!(s.peak_bin(), Some(1));
    assert!(low_frequency_power(&s, 1e-3) > 0.99);
    assert!(low_frequency_power(&s, 0.1e-3) < 1e-12);
}

#[test]
fn constant_trace_is_degenerate() {
    let s = dft(&trace_of(&[7; 16], 2.0)).unwrap();
    assert!(s.degenerate);
    assert!(s.magnitudes.iter().all(|&m| m == 0.0));
    assert_eq!(low_frequency_power(&s, 1.0), 0.0);
}

proptest! {
    #[test]
    fn normalized_power_sums_to_one(
        x in prop::collection::vec(0.0f64..1000.0, 2..300),
        dwell in 0.1f64..10.0,
        hann in any::<bool>(),
        subtract in any::<bool>(),
    ) {
        let window = if hann { Window::Hann } else { Window::Rectangular };
        let s = spectrum_of(&x, dwell, DftOptions { subtract_mean: subtract, window }).unwrap();
        let total: f64 = s.magnitudes.iter().map(|m| m * m).sum();
        if s.degenerate {
            prop_assert_eq!(total, 0.0);
        } else {
            prop_assert!((total - 1.0).abs() < 1e-12);
            // real input: |X_k| = |X_{N-k}|
            let n = s.len();
            for k in 1..n {
                prop_assert!((s.magnitudes[k] - s.magnitudes[n - k]).abs() < 1e-10);
            }
            let lf = low_frequency_power(&s, 0.5 / dwell);
            let dc = s.magnitudes[0].powi(2);
            prop_assert!((lf + dc - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn fringe_fit_recovers_noiseless_parameters(
        a in 50.0f64..1000.0,
        v in 0.05f64..1.0,
        phase in -PI..PI,
        steps in 8usize..40,
        step in 0.2f64..1.0,
    ) {
        prop_assume!((steps - 1) as f64 * step >= PI + 0.1);
        let scan: Vec<(f64, f64)> = (0..steps)
            .map(|k| {
                let x = k as f64 * step;
                (x, a * (1.0 + v * (x + phase).cos()))
            })
            .collect();
        let fit = fit_fringe(&scan).unwrap();
        prop_assert!((fit.visibility - v).abs() < 1e-9);
        prop_assert!((fit.mean - a).abs() < 1e-9 * a);
        let dphi = (fit.phase_offset - phase).rem_euclid(TAU);
        prop_assert!(dphi.min(TAU - dphi) < 1e-9);
        prop_assert!(fit.residual_rms < 1e-9 * a);
    }
}

#[test]
fn fringe_fit_rejects_short_scans() {
    let few: Vec<(f64, f64)> = (0..4).map(|k| (k as f64, 1.0 + k as f64)).collect();
    assert!(fit_fringe(&few).is_err());
    let narrow: Vec<(f64, f64)> = (0..10)
        .map(|k| (0.1 * k as f64, 1.0 + (0.1 * k as f64).cos()))
        .collect();
    assert!(fit_fringe(&narrow).is_err());
}
