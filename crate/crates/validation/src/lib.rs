//! Closed-form reference solutions the simulator is validated against.

use std::f64::consts::PI;

/// Deflection of `T ∇²w = -p` on `[0,a]x[0,b]` with `w = 0` on the edge:
/// `w = 16p/(π⁴T) Σ_{m,n odd} sin(mπx/a) sin(nπy/b) / (mn (m²/a² + n²/b²))`.
///
/// `terms` bounds `m` and `n`; the tail falls off like `1/terms³`.
pub fn series_deflection(a: f64, b: f64, p: f64, t: f64, x: f64, y: f64, terms: usize) -> f64 {
    let mut sum = 0.0;
    for m in (1..=terms).step_by(2) {
        let sx = (m as f64 * PI * x / a).sin();
        for n in (1..=terms).step_by(2) {
            let (mf, nf) = (m as f64, n as f64);
            let k = mf * mf / (a * a) + nf * nf / (b * b);
            sum += sx * (nf * PI * y / b).sin() / (mf * nf * k);
        }
    }
    16.0 * p / (PI.powi(4) * t) * sum
}
