//! Two-plane control of the membrane mirror.
//!
//! The influence functions add linearly in pressure, i.e. in `V²`. A drive
//! pattern is therefore described by coefficients `c ∈ [0, 1]` per channel,
//! with `V = V_max √c` and deflection `Σ c_k F_k`.
//!
//! The two planes are commanded as horizontal targets at heights
//! `a + displacement_1` and `a + displacement_2`, where the common piston `a`
//! is free: only the relative displacement `d` matters to the interferometer.
//! `d` itself is imposed exactly through the linear equality
//! `Σ c_k (mean_2 F_k - mean_1 F_k) = d`, and the flatness error is minimized
//! over the box-and-hyperplane feasible set with an accelerated projected
//! gradient method.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::membrane::{
    influence_function, sample_field, DeformationField, ElectrodeLayout, GridShape,
    MembraneGeometry, Rect, VoltagePattern,
};
use crate::numfmt::sig9;

/// Number of distinct mirror command levels (8-bit driver).
pub const LEVELS: u32 = 256;
pub const MAX_LEVEL: u8 = 255;

/// Default side of the square plane regions [m].
pub const DEFAULT_REGION_SIZE: f64 = 1.4e-3;

/// Default flatness acceptance [m rms].
pub const DEFAULT_FLATNESS_THRESHOLD: f64 = 30e-9;

/// Default plane-position scan step [m].
pub const DEFAULT_SEARCH_STEP: f64 = 0.2e-3;

#[derive(Debug, Clone)]
pub struct InfluenceBasis {
    pub geometry: MembraneGeometry,
    pub layout: ElectrodeLayout,
    /// One max-voltage deflection per channel
    pub fields: Vec<DeformationField>,
}

pub fn build_basis(geom: &MembraneGeometry, layout: &ElectrodeLayout) -> Result<InfluenceBasis> {
    geom.validate()?;
    layout.validate(geom)?;
    let n = layout.channel_count();
    // Channels are independent solves; run them side by side.
    let fields: Vec<Result<DeformationField>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..n)
            .map(|k| s.spawn(move || influence_function(geom, layout, k)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("influence solve panicked"))
            .collect()
    });
    Ok(InfluenceBasis {
        geometry: *geom,
        layout: layout.clone(),
        fields: fields.into_iter().collect::<Result<_>>()?,
    })
}

impl InfluenceBasis {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn shape(&self) -> GridShape {
        self.geometry.shape()
    }

    /// Basis for the same membrane at another tension. Deflection is exactly
    /// proportional to `1/T`, so the fields are rescaled instead of re-solved.
    pub fn with_tension(&self, tension: f64) -> Result<Self> {
        let geometry = self.geometry.with_tension(tension)?;
        let k = self.geometry.tension / tension;
        let fields = self
            .fields
            .iter()
            .map(|f| DeformationField {
                shape: f.shape,
                values: f.values.iter().map(|v| v * k).collect(),
            })
            .collect();
        Ok(Self {
            geometry,
            layout: self.layout.clone(),
            fields,
        })
    }

    /// `Σ c_k F_k`.
    pub fn combine(&self, coeffs: &[f64]) -> Result<DeformationField> {
        DeformationField::combine(&self.fields, coeffs)
    }

    /// Per-channel change of `mean_2 - mean_1` for a unit coefficient.
    pub fn displacement_gains(&self, region_1: &Rect, region_2: &Rect) -> Result<Vec<f64>> {
        let s1 = RegionSamples::new(self, region_1)?;
        let s2 = RegionSamples::new(self, region_2)?;
        Ok((0..self.len()).map(|k| s2.mean(k) - s1.mean(k)).collect())
    }

    /// Interval of relative displacements `d` reachable with `c ∈ [0, 1]`.
    pub fn reachable_range(&self, region_1: &Rect, region_2: &Rect) -> Result<(f64, f64)> {
        let w = self.displacement_gains(region_1, region_2)?;
        Ok(reachable(&w))
    }
}

fn reachable(w: &[f64]) -> (f64, f64) {
    (
        w.iter().map(|v| v.min(0.0)).sum(),
        w.iter().map(|v| v.max(0.0)).sum(),
    )
}

/// Influence values on the nodes of one region, stored channel-major.
struct RegionSamples {
    nodes: Vec<(usize, usize)>,
    values: Vec<Vec<f64>>,
}

impl RegionSamples {
    fn new(basis: &InfluenceBasis, region: &Rect) -> Result<Self> {
        let shape = basis.shape();
        let domain = basis.geometry.bounds();
        if !region.is_valid() || !domain.contains_rect(region) {
            return Err(Error::RegionOutsideDomain(format!("{region:?}")));
        }
        let nodes = shape.nodes_in(region);
        if nodes.is_empty() {
            return Err(Error::RegionOutsideDomain(format!(
                "{region:?} contains no grid nodes"
            )));
        }
        let values = basis
            .fields
            .iter()
            .map(|f| nodes.iter().map(|&(i, j)| f.at(i, j)).collect())
            .collect();
        Ok(Self { nodes, values })
    }

    fn mean(&self, k: usize) -> f64 {
        self.values[k].iter().sum::<f64>() / self.nodes.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneTarget {
    pub region_1: Rect,
    pub region_2: Rect,
    /// [m]
    pub displacement_1: f64,
    /// [m]
    pub displacement_2: f64,
    /// [m rms]
    pub flatness_threshold: f64,
}

impl PlaneTarget {
    /// Plane 1 held as the reference, plane 2 displaced by `d`.
    pub fn relative(region_1: Rect, region_2: Rect, d: f64, flatness_threshold: f64) -> Self {
        Self {
            region_1,
            region_2,
            displacement_1: 0.0,
            displacement_2: d,
            flatness_threshold,
        }
    }

    pub fn relative_displacement(&self) -> f64 {
        self.displacement_2 - self.displacement_1
    }

    fn validate(&self, geom: &MembraneGeometry) -> Result<()> {
        let domain = geom.bounds();
        for (name, r) in [("region_1", &self.region_1), ("region_2", &self.region_2)] {
            if !r.is_valid() || !domain.contains_rect(r) {
                return Err(Error::RegionOutsideDomain(format!("{name} {r:?}")));
            }
        }
        if self.region_1.overlaps(&self.region_2) {
            return Err(Error::InvalidParameter("plane regions overlap".into()));
        }
        if !(self.displacement_1.is_finite() && self.displacement_2.is_finite()) {
            return Err(Error::InvalidParameter("non-finite displacement".into()));
        }
        if self.flatness_threshold.is_nan() || self.flatness_threshold < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "flatness threshold must be non-negative, got {}",
                self.flatness_threshold
            )));
        }
        Ok(())
    }
}

/// Projected-gradient controls for [`solve_voltages_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerOptions {
    /// Stop when the projected-gradient step `‖c - Π(c - ∇f/L)‖` falls below this.
    /// Coefficients live in `[0, 1]`, so the tolerance is absolute.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VoltageSolution {
    /// Pressure-space coefficients, each in `[0, 1]`
    pub coefficients: Vec<f64>,
    pub pattern: VoltagePattern,
    pub achieved: DeformationField,
    /// Common piston of both commanded planes [m]
    pub piston: f64,
    /// rms of `M - piston - displacement_1` over region 1 [m]
    pub rms_error_1: f64,
    /// rms of `M - piston - displacement_2` over region 2 [m]
    pub rms_error_2: f64,
    /// Angle between the two best-fit planes [rad]
    pub parallelism: f64,
    /// Tilt of each best-fit plane relative to the undeformed membrane [rad]
    pub tilt_1: f64,
    pub tilt_2: f64,
    /// `mean_2 - mean_1` of the achieved field [m]
    pub achieved_displacement: f64,
    /// Both rms errors at or below the target threshold
    pub meets_threshold: bool,
    pub iterations: usize,
    pub converged: bool,
}

impl VoltageSolution {
    pub fn max_rms(&self) -> f64 {
        self.rms_error_1.max(self.rms_error_2)
    }
}

pub fn solve_voltages(basis: &InfluenceBasis, target: &PlaneTarget) -> Result<VoltageSolution> {
    solve_voltages_with(basis, target, OptimizerOptions::default())
}

pub fn solve_voltages_with(
    basis: &InfluenceBasis,
    target: &PlaneTarget,
    opts: OptimizerOptions,
) -> Result<VoltageSolution> {
    target.validate(&basis.geometry)?;
    let problem = PlaneProblem::new(basis, target)?;
    let d = target.relative_displacement();
    let (lo, hi) = reachable(&problem.w);
    let slack = 1e-12 * (hi - lo).abs().max(f64::MIN_POSITIVE);
    if d < lo - slack || d > hi + slack {
        return Err(Error::Unreachable {
            requested: d,
            min: lo,
            max: hi,
        });
    }
    let (c, iterations, converged) = problem.minimize(d.clamp(lo, hi), opts);
    evaluate(basis, target, &problem, c, iterations, converged)
}

/// Least-squares flatness objective `½ cᵀQc - gᵀc` with the piston eliminated,
/// plus the displacement constraint row `w`.
struct PlaneProblem {
    n: usize,
    q: Vec<f64>,
    g: Vec<f64>,
    w: Vec<f64>,
    lipschitz: f64,
    r1: RegionSamples,
    r2: RegionSamples,
}

impl PlaneProblem {
    fn new(basis: &InfluenceBasis, target: &PlaneTarget) -> Result<Self> {
        let r1 = RegionSamples::new(basis, &target.region_1)?;
        let r2 = RegionSamples::new(basis, &target.region_2)?;
        let n = basis.len();
        // Stack both regions: rows of A are F_k at each node, t the commanded height.
        let rows = r1.nodes.len() + r2.nodes.len();
        let column = |k: usize| r1.values[k].iter().chain(&r2.values[k]).copied();
        let t: Vec<f64> = std::iter::repeat_n(target.displacement_1, r1.nodes.len())
            .chain(std::iter::repeat_n(target.displacement_2, r2.nodes.len()))
            .collect();
        // Centering removes the free piston.
        let centered = |v: Vec<f64>| {
            let m = v.iter().sum::<f64>() / rows as f64;
            v.into_iter().map(|x| x - m).collect::<Vec<f64>>()
        };
        let cols: Vec<Vec<f64>> = (0..n).map(|k| centered(column(k).collect())).collect();
        let tc = centered(t);
        let mut q = vec![0.0; n * n];
        let mut g = vec![0.0; n];
        for a in 0..n {
            for b in a..n {
                let v: f64 = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).sum();
                q[a * n + b] = v;
                q[b * n + a] = v;
            }
            g[a] = cols[a].iter().zip(&tc).map(|(x, y)| x * y).sum();
        }
        let w = (0..n).map(|k| r2.mean(k) - r1.mean(k)).collect();
        let lipschitz = largest_eigenvalue(&q, n);
        Ok(Self {
            n,
            q,
            g,
            w,
            lipschitz,
            r1,
            r2,
        })
    }

    fn gradient(&self, c: &[f64], out: &mut [f64]) {
        for a in 0..self.n {
            let row = &self.q[a * self.n..(a + 1) * self.n];
            out[a] = row.iter().zip(c).map(|(q, c)| q * c).sum::<f64>() - self.g[a];
        }
    }

    /// FISTA with gradient restart, started from `c = 0` projected onto the
    /// feasible set.
    fn minimize(&self, d: f64, opts: OptimizerOptions) -> (Vec<f64>, usize, bool) {
        let n = self.n;
        let mut x = project(&vec![0.0; n], &self.w, d);
        if self.lipschitz <= 0.0 {
            return (x, 0, true);
        }
        let step = 1.0 / self.lipschitz;
        let mut y = x.clone();
        let mut t = 1.0_f64;
        let mut grad = vec![0.0; n];
        let mut trial = vec![0.0; n];
        for it in 1..=opts.max_iterations {
            self.gradient(&y, &mut grad);
            for k in 0..n {
                trial[k] = y[k] - step * grad[k];
            }
            let x_next = project(&trial, &self.w, d);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // Restart momentum when it points uphill.
            let uphill: f64 = (0..n)
                .map(|k| (y[k] - x_next[k]) * (x_next[k] - x[k]))
                .sum();
            if uphill > 0.0 {
                t = 1.0;
                y.clone_from(&x_next);
            } else {
                let beta = (t - 1.0) / t_next;
                for k in 0..n {
                    y[k] = x_next[k] + beta * (x_next[k] - x[k]);
                }
                t = t_next;
            }
            x = x_next;
            if self.stationarity(&x, d) <= opts.tolerance {
                return (x, it, true);
            }
        }
        let ok = self.stationarity(&x, d) <= opts.tolerance;
        (x, opts.max_iterations, ok)
    }

    /// Length of the projected-gradient step from `c`.
    fn stationarity(&self, c: &[f64], d: f64) -> f64 {
        let mut grad = vec![0.0; self.n];
        self.gradient(c, &mut grad);
        let step = 1.0 / self.lipschitz;
        let trial: Vec<f64> = c.iter().zip(&grad).map(|(c, g)| c - step * g).collect();
        let p = project(&trial, &self.w, d);
        p.iter()
            .zip(c)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Euclidean projection onto `{c ∈ [0,1]ⁿ : wᵀc = d}`.
///
/// The projection is `clip(y - λw, 0, 1)` for the multiplier `λ` that satisfies
/// the constraint; `wᵀ clip(y - λw)` is non-increasing in `λ`, so bisection
/// finds it.
fn project(y: &[f64], w: &[f64], d: f64) -> Vec<f64> {
    let clip = |lambda: f64| -> Vec<f64> {
        y.iter()
            .zip(w)
            .map(|(y, w)| (y - lambda * w).clamp(0.0, 1.0))
            .collect()
    };
    let h = |lambda: f64| -> f64 { clip(lambda).iter().zip(w).map(|(c, w)| c * w).sum() };
    let w_norm2: f64 = w.iter().map(|v| v * v).sum();
    let unshifted = clip(0.0);
    if w_norm2 == 0.0 || h(0.0) == d {
        return unshifted;
    }
    // Past these multipliers every coordinate sits on a bound.
    let span = y
        .iter()
        .zip(w)
        .filter(|(_, w)| **w != 0.0)
        .map(|(y, w)| (y.abs() + 1.0) / w.abs())
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (-span, span);
    if h(lo) <= d {
        return clip(lo);
    }
    if h(hi) >= d {
        return clip(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) > d {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    clip(0.5 * (lo + hi))
}

/// Largest eigenvalue of a small symmetric positive semi-definite matrix.
fn largest_eigenvalue(q: &[f64], n: usize) -> f64 {
    let trace: f64 = (0..n).map(|k| q[k * n + k]).sum();
    if trace <= 0.0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut next: Vec<f64> = (0..n)
            .map(|a| (0..n).map(|b| q[a * n + b] * v[b]).sum())
            .collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return trace;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        let converged = (norm - lambda).abs() <= 1e-14 * norm;
        lambda = norm;
        v = next;
        if converged {
            break;
        }
    }
    // A slightly pessimistic bound keeps the fixed step safe.
    (lambda * 1.001).min(trace)
}

fn evaluate(
    basis: &InfluenceBasis,
    target: &PlaneTarget,
    problem: &PlaneProblem,
    c: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> Result<VoltageSolution> {
    let at = |s: &RegionSamples, node: usize| -> f64 {
        (0..problem.n).map(|k| c[k] * s.values[k][node]).sum()
    };
    let n1 = problem.r1.nodes.len();
    let n2 = problem.r2.nodes.len();
    let piston = ((0..n1)
        .map(|m| at(&problem.r1, m) - target.displacement_1)
        .sum::<f64>()
        + (0..n2)
            .map(|m| at(&problem.r2, m) - target.displacement_2)
            .sum::<f64>())
        / (n1 + n2) as f64;
    let rms = |s: &RegionSamples, len: usize, disp: f64| -> f64 {
        ((0..len)
            .map(|m| (at(s, m) - piston - disp).powi(2))
            .sum::<f64>()
            / len as f64)
            .sqrt()
    };
    let rms_error_1 = rms(&problem.r1, n1, target.displacement_1);
    let rms_error_2 = rms(&problem.r2, n2, target.displacement_2);

    let achieved = basis.combine(&c)?;
    let p1 = sample_field(&achieved, &target.region_1)?;
    let p2 = sample_field(&achieved, &target.region_2)?;
    let parallelism = (p1.slope_x - p2.slope_x).hypot(p1.slope_y - p2.slope_y);

    let vmax = basis.layout.max_voltage;
    let pattern = VoltagePattern {
        volts: c.iter().map(|ck| (vmax * ck.sqrt()).min(vmax)).collect(),
    };
    Ok(VoltageSolution {
        pattern,
        piston,
        rms_error_1,
        rms_error_2,
        parallelism,
        tilt_1: p1.tilt,
        tilt_2: p2.tilt,
        achieved_displacement: p2.mean - p1.mean,
        meets_threshold: rms_error_1 <= target.flatness_threshold
            && rms_error_2 <= target.flatness_threshold,
        iterations,
        converged,
        achieved,
        coefficients: c,
    })
}

/// Default plane regions: the empty strip at the centre of each electrode
/// couple, at mid-height.
pub fn couple_gap_regions(
    geom: &MembraneGeometry,
    couple_separation: f64,
    size: f64,
) -> (Rect, Rect) {
    let y = 0.5 * geom.height;
    let mid = 0.5 * geom.width;
    (
        Rect::centered(mid - 0.5 * couple_separation, y, size),
        Rect::centered(mid + 0.5 * couple_separation, y, size),
    )
}

/// Tension at which the largest reachable relative displacement between the
/// two regions equals `stroke`.
pub fn calibrate_tension(
    basis: &InfluenceBasis,
    region_1: &Rect,
    region_2: &Rect,
    stroke: f64,
) -> Result<f64> {
    if !(stroke.is_finite() && stroke > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "stroke must be positive, got {stroke}"
        )));
    }
    let (_, d_max) = basis.reachable_range(region_1, region_2)?;
    if d_max <= 0.0 {
        return Err(Error::InvalidParameter(
            "layout cannot displace plane 2 relative to plane 1".into(),
        ));
    }
    Ok(basis.geometry.tension * d_max / stroke)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneCandidate {
    pub region_1: Rect,
    pub region_2: Rect,
    /// Centre-to-centre distance [m]
    pub separation: f64,
    /// Worse of the two plane rms errors at full stroke [m]
    pub rms: f64,
    pub parallelism: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSearchResult {
    pub separation: f64,
    pub region_1: Rect,
    pub region_2: Rect,
    pub rms: f64,
    /// First accepted plane-2 position for every plane-1 position that had one
    pub accepted: Vec<PlaneCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneSearchOptions {
    pub region_size: f64,
    pub threshold: f64,
    /// Relative displacement each candidate must realize [m]
    pub stroke: f64,
    pub step: f64,
}

/// Nested placement scan along the membrane midline.
///
/// For each plane-1 position (left to right, `step` apart) plane 2 starts just
/// clear of plane 1 and moves right until the worse plane rms at full stroke
/// meets the threshold. Positions that cannot reach the stroke are skipped.
/// The accepted configuration with the lowest rms wins.
pub fn plane_search(
    basis: &InfluenceBasis,
    opts: &PlaneSearchOptions,
) -> Result<PlaneSearchResult> {
    let geom = &basis.geometry;
    let size = opts.region_size;
    if !(size > 0.0 && opts.step > 0.0 && 2.0 * size < geom.width && size <= geom.height) {
        return Err(Error::InvalidParameter(format!(
            "plane search needs 0 < region_size and step, got {size} and {}",
            opts.step
        )));
    }
    if opts.threshold.is_nan() || opts.threshold < 0.0 {
        return Err(Error::InvalidParameter(
            "threshold must be non-negative".into(),
        ));
    }
    let y = 0.5 * geom.height;
    let positions = |from: f64| -> Vec<f64> {
        let mut v = Vec::new();
        let mut k = 0usize;
        loop {
            let x0 = from + k as f64 * opts.step;
            if x0 + size > geom.width - 0.5 * opts.step {
                break;
            }
            v.push(x0);
            k += 1;
        }
        v
    };
    let outer = positions(opts.step);
    let scan = |x1: f64| -> (Option<PlaneCandidate>, f64) {
        let r1 = Rect::new(x1, x1 + size, y - 0.5 * size, y + 0.5 * size);
        let mut best = f64::INFINITY;
        for x2 in positions(x1 + size + opts.step) {
            let r2 = Rect::new(x2, x2 + size, y - 0.5 * size, y + 0.5 * size);
            let target = PlaneTarget::relative(r1, r2, opts.stroke, opts.threshold);
            let sol = match solve_voltages(basis, &target) {
                Ok(s) => s,
                Err(Error::Unreachable { .. }) => continue,
                Err(_) => continue,
            };
            let rms = sol.max_rms();
            best = best.min(rms);
            if rms <= opts.threshold {
                return (
                    Some(PlaneCandidate {
                        region_1: r1,
                        region_2: r2,
                        separation: x2 - x1,
                        rms,
                        parallelism: sol.parallelism,
                    }),
                    best,
                );
            }
        }
        (None, best)
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(outer.len().max(1));
    let results: Vec<(Option<PlaneCandidate>, f64)> = std::thread::scope(|s| {
        let chunks: Vec<_> = outer
            .chunks(outer.len().div_ceil(workers).max(1))
            .map(|chunk| s.spawn(|| chunk.iter().map(|&x1| scan(x1)).collect::<Vec<_>>()))
            .collect();
        chunks
            .into_iter()
            .flat_map(|h| h.join().expect("plane scan panicked"))
            .collect()
    });
    let best_rms = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let accepted: Vec<PlaneCandidate> = results.into_iter().filter_map(|r| r.0).collect();
    let winner = accepted
        .iter()
        .copied()
        .reduce(|a, b| if b.rms < a.rms { b } else { a })
        .ok_or(Error::NoFeasiblePlanes {
            threshold: opts.threshold,
            best_rms,
        })?;
    Ok(PlaneSearchResult {
        separation: winner.separation,
        region_1: winner.region_1,
        region_2: winner.region_2,
        rms: winner.rms,
        accepted,
    })
}

/// 8-bit relative-displacement command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MirrorCommand {
    pub quantized_level: u8,
}

impl MirrorCommand {
    pub fn from_level(level: u8) -> Self {
        Self {
            quantized_level: level,
        }
    }

    /// Nearest level to displacement `d`, clamped to `[0, stroke]`.
    pub fn from_displacement(d: f64, stroke: f64) -> Self {
        let level = (d / stroke * MAX_LEVEL as f64)
            .round()
            .clamp(0.0, MAX_LEVEL as f64);
        Self {
            quantized_level: level as u8,
        }
    }

    /// Displacement reconstructed from the level [m].
    pub fn relative_displacement(&self, stroke: f64) -> f64 {
        self.quantized_level as f64 / MAX_LEVEL as f64 * stroke
    }
}

/// Phase added to one arm by moving a mirror plane by `d`: `2π·δ/λ`, `δ = rf·d`.
pub fn displacement_to_phase(d: f64, wavelength: f64, reflection_factor: f64) -> f64 {
    2.0 * PI * reflection_factor * d / wavelength
}

/// Mirror actuator as seen by the interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorActuator {
    /// Full-scale relative displacement [m]
    pub stroke: f64,
    pub wavelength: f64,
    /// Optical path change per unit plane displacement
    pub reflection_factor: f64,
}

impl Default for MirrorActuator {
    fn default() -> Self {
        Self {
            stroke: 600e-9,
            wavelength: 532e-9,
            reflection_factor: 2.0,
        }
    }
}

impl MirrorActuator {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stroke", self.stroke),
            ("wavelength", self.wavelength),
            ("reflection_factor", self.reflection_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "mirror {name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn command_to_phase(&self, cmd: MirrorCommand) -> f64 {
        command_to_phase(cmd, self.stroke, self.wavelength, self.reflection_factor)
    }

    /// Phase change per level [rad].
    pub fn phase_quantum(&self) -> f64 {
        displacement_to_phase(
            self.stroke / MAX_LEVEL as f64,
            self.wavelength,
            self.reflection_factor,
        )
    }

    /// Phase at full stroke [rad].
    pub fn phase_range(&self) -> f64 {
        displacement_to_phase(self.stroke, self.wavelength, self.reflection_factor)
    }

    /// Nearest level to phase `phi`, clamped to the actuator range.
    pub fn level_for_phase(&self, phi: f64) -> u8 {
        let level = (phi / self.phase_quantum())
            .round()
            .clamp(0.0, MAX_LEVEL as f64);
        level as u8
    }
}

pub fn command_to_phase(
    cmd: MirrorCommand,
    stroke: f64,
    wavelength: f64,
    reflection_factor: f64,
) -> f64 {
    displacement_to_phase(
        cmd.relative_displacement(stroke),
        wavelength,
        reflection_factor,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub level: u8,
    pub d_commanded: f64,
    pub d_achieved: f64,
    pub rms1: f64,
    pub rms2: f64,
    /// Plane-to-plane tilt [rad]
    pub tilt: f64,
    pub meets_threshold: bool,
}

/// Solves every command level and records the resulting plane quality.
pub fn calibration_sweep(
    basis: &InfluenceBasis,
    region_1: &Rect,
    region_2: &Rect,
    stroke: f64,
    threshold: f64,
) -> Result<Vec<CalibrationRow>> {
    let levels: Vec<u8> = (0..=MAX_LEVEL).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let rows: Vec<Result<CalibrationRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = levels
            .chunks(levels.len().div_ceil(workers))
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|&level| {
                            let d = MirrorCommand::from_level(level).relative_displacement(stroke);
                            let target = PlaneTarget::relative(*region_1, *region_2, d, threshold);
                            let sol = solve_voltages(basis, &target)?;
                            Ok(CalibrationRow {
                                level,
                                d_commanded: d,
                                d_achieved: sol.achieved_displacement,
                                rms1: sol.rms_error_1,
                                rms2: sol.rms_error_2,
                                tilt: sol.parallelism,
                                meets_threshold: sol.meets_threshold,
                            })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("calibration worker panicked"))
            .collect()
    });
    rows.into_iter().collect()
}

pub const CALIBRATION_HEADER: &str = "level,d_commanded_m,d_achieved_m,rms1_m,rms2_m,tilt_rad";

pub fn write_calibration_csv<W: Write>(rows: &[CalibrationRow], mut out: W) -> Result<()> {
    writeln!(out, "{CALIBRATION_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.level,
            sig9(r.d_commanded),
            sig9(r.d_achieved),
            sig9(r.rms1),
            sig9(r.rms2),
            sig9(r.tilt)
        )?;
    }
    Ok(())
}
