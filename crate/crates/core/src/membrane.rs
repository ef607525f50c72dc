//! Electrostatically actuated rectangular membrane.
//!
//! The membrane deflection `M(x, y)` obeys the Poisson problem
//!
//! ```text
//! ∇²M = -p / T,    M = 0 on the clamped boundary
//! p   = (ε₀ / 2) (V / h)²
//! ```
//!
//! discretized with the five-point Laplacian on a uniform node grid and solved
//! with conjugate gradients. Deflection is positive toward the electrodes.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum permittivity [F/m].
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;

/// Driver ceiling [V].
pub const DRIVER_MAX_VOLTAGE: f64 = 265.0;

/// Physical and discretization parameters of the membrane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembraneGeometry {
    /// Extent along x [m]
    pub width: f64,
    /// Extent along y [m]
    pub height: f64,
    /// Mechanical tension [N/m]
    pub tension: f64,
    /// Membrane-to-electrode distance [m]
    pub gap: f64,
    /// Nodes along x, boundary included
    pub grid_nx: usize,
    /// Nodes along y, boundary included
    pub grid_ny: usize,
}

impl MembraneGeometry {
    pub fn new(
        width: f64,
        height: f64,
        tension: f64,
        gap: f64,
        grid_nx: usize,
        grid_ny: usize,
    ) -> Result<Self> {
        let g = Self {
            width,
            height,
            tension,
            gap,
            grid_nx,
            grid_ny,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("tension", self.tension),
            ("gap", self.gap),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "membrane {name} must be positive and finite, got {v}"
                )));
            }
        }
        if self.grid_nx < 3 || self.grid_ny < 3 {
            return Err(Error::InvalidParameter(format!(
                "grid must have at least 3 nodes per axis, got {}x{}",
                self.grid_nx, self.grid_ny
            )));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.width / (self.grid_nx - 1) as f64
    }

    pub fn dy(&self) -> f64 {
        self.height / (self.grid_ny - 1) as f64
    }

    pub fn shape(&self) -> GridShape {
        GridShape {
            nx: self.grid_nx,
            ny: self.grid_ny,
            dx: self.dx(),
            dy: self.dy(),
        }
    }

    /// Same membrane with a different tension. Deflections scale as `1/T`.
    pub fn with_tension(&self, tension: f64) -> Result<Self> {
        let mut g = *self;
        g.tension = tension;
        g.validate()?;
        Ok(g)
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0.0, self.width, 0.0, self.height)
    }
}

/// Node layout of a field sampled on the membrane grid. Node `(i, j)` sits at
/// `(i * dx, j * dy)` and is stored at `j * nx + i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

impl GridShape {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    fn same_nodes(&self, other: &GridShape) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && (self.dx - other.dx).abs() <= 1e-12 * self.dx
            && (self.dy - other.dy).abs() <= 1e-12 * self.dy
    }

    /// Node indices `(i, j)` whose coordinates fall inside `rect` (edges included).
    pub fn nodes_in(&self, rect: &Rect) -> Vec<(usize, usize)> {
        let tol = 1e-6 * self.dx.min(self.dy);
        let i0 = ((rect.x0 - tol) / self.dx).ceil().max(0.0) as usize;
        let i1 = (((rect.x1 + tol) / self.dx).floor() as isize).min(self.nx as isize - 1);
        let j0 = ((rect.y0 - tol) / self.dy).ceil().max(0.0) as usize;
        let j1 = (((rect.y1 + tol) / self.dy).floor() as isize).min(self.ny as isize - 1);
        if i1 < 0 || j1 < 0 {
            return Vec::new();
        }
        let mut nodes = Vec::new();
        for j in j0..=j1 as usize {
            for i in i0..=i1 as usize {
                nodes.push((i, j));
            }
        }
        nodes
    }
}

/// Axis-aligned rectangle [m].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    /// Square of side `size` centred on `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, size: f64) -> Self {
        let h = 0.5 * size;
        Self::new(cx - h, cx + h, cy - h, cy + h)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn is_valid(&self) -> bool {
        [self.x0, self.x1, self.y0, self.y1]
            .iter()
            .all(|v| v.is_finite())
            && self.x1 > self.x0
            && self.y1 > self.y0
    }

    /// Containment with a small absolute slack for round-off in derived coordinates.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        let tol = 1e-9 * self.width().max(self.height()).max(1e-12);
        other.x0 >= self.x0 - tol
            && other.x1 <= self.x1 + tol
            && other.y0 >= self.y0 - tol
            && other.y1 <= self.y1 + tol
    }

    /// True when the interiors intersect. Shared edges do not count.
    pub fn overlaps(&self, other: &Rect) -> bool {
        let tol = 1e-12;
        self.x0 < other.x1 - tol
            && other.x0 < self.x1 - tol
            && self.y0 < other.y1 - tol
            && other.y0 < self.y1 - tol
    }
}

/// One electrode rectangle driven by actuator channel `index`. Several
/// rectangles may share an index (split electrodes on one driver channel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadRect {
    pub index: usize,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub pads: Vec<PadRect>,
    /// Voltage applied for an influence function [V]
    pub max_voltage: f64,
}

impl ElectrodeLayout {
    pub fn new(pads: Vec<PadRect>, max_voltage: f64, geom: &MembraneGeometry) -> Result<Self> {
        let layout = Self { pads, max_voltage };
        layout.validate(geom)?;
        Ok(layout)
    }

    /// Two couples of 1.4 mm x 15 mm electrodes with 1.4 mm spacing, one couple
    /// centred `couple_separation / 2` either side of the membrane midline.
    /// The empty strip inside each couple is where a flat plane forms.
    /// Channels are numbered left to right.
    pub fn two_couples(
        geom: &MembraneGeometry,
        pad_width: f64,
        pad_length: f64,
        couple_separation: f64,
        max_voltage: f64,
    ) -> Result<Self> {
        let mid_x = 0.5 * geom.width;
        let y0 = 0.5 * (geom.height - pad_length);
        let mut pads = Vec::with_capacity(4);
        for center in [
            mid_x - 0.5 * couple_separation,
            mid_x + 0.5 * couple_separation,
        ] {
            for x0 in [center - 1.5 * pad_width, center + 0.5 * pad_width] {
                pads.push(PadRect {
                    index: pads.len(),
                    rect: Rect::new(x0, x0 + pad_width, y0, y0 + pad_length),
                });
            }
        }
        Self::new(pads, max_voltage, geom)
    }

    pub fn validate(&self, geom: &MembraneGeometry) -> Result<()> {
        if !(self.max_voltage > 0.0 && self.max_voltage <= DRIVER_MAX_VOLTAGE) {
            return Err(Error::InvalidParameter(format!(
                "max_voltage must lie in (0, {DRIVER_MAX_VOLTAGE}] V, got {}",
                self.max_voltage
            )));
        }
        if self.pads.is_empty() {
            return Err(Error::InvalidParameter("layout has no pads".into()));
        }
        let bounds = geom.bounds();
        for (k, pad) in self.pads.iter().enumerate() {
            if !pad.rect.is_valid() {
                return Err(Error::InvalidParameter(format!(
                    "pad rectangle {k} is degenerate: {:?}",
                    pad.rect
                )));
            }
            if !bounds.contains_rect(&pad.rect) {
                return Err(Error::InvalidParameter(format!(
                    "pad rectangle {k} (channel {}) extends outside the membrane",
                    pad.index
                )));
            }
            for other in &self.pads[k + 1..] {
                if pad.rect.overlaps(&other.rect) {
                    return Err(Error::InvalidParameter(format!(
                        "pads on channels {} and {} overlap",
                        pad.index, other.index
                    )));
                }
            }
        }
        let n = self.channel_count();
        for c in 0..n {
            if !self.pads.iter().any(|p| p.index == c) {
                return Err(Error::InvalidParameter(format!(
                    "channel indices must be contiguous from 0; channel {c} has no pad"
                )));
            }
        }
        Ok(())
    }

    /// Number of independently driven channels.
    pub fn channel_count(&self) -> usize {
        self.pads.iter().map(|p| p.index + 1).max().unwrap_or(0)
    }
}

/// Per-channel drive voltages [V], indexed by channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltagePattern {
    pub volts: Vec<f64>,
}

impl VoltagePattern {
    pub fn zeros(channels: usize) -> Self {
        Self {
            volts: vec![0.0; channels],
        }
    }

    /// Only `channel` at `volts`, everything else grounded.
    pub fn single(channels: usize, channel: usize, volts: f64) -> Self {
        let mut p = Self::zeros(channels);
        p.volts[channel] = volts;
        p
    }
}

/// Electrostatic pressure sampled on the membrane nodes [Pa].
#[derive(Debug, Clone, PartialEq)]
pub struct PressureMap {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

impl PressureMap {
    pub fn zeros(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn uniform(shape: GridShape, pressure: f64) -> Self {
        Self {
            shape,
            values: vec![pressure; shape.len()],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.shape.index(i, j)]
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            shape: self.shape,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }
}

/// Parallel-plate pressure for a pad at `volts` with gap `gap`.
pub fn parallel_plate_pressure(volts: f64, gap: f64) -> f64 {
    0.5 * EPSILON_0 * (volts / gap).powi(2)
}

pub fn pressure_map(
    geom: &MembraneGeometry,
    layout: &ElectrodeLayout,
    voltages: &VoltagePattern,
) -> Result<PressureMap> {
    let channels = layout.channel_count();
    if voltages.volts.len() != channels {
        return Err(Error::InvalidParameter(format!(
            "voltage pattern has {} channels, layout has {channels}",
            voltages.volts.len()
        )));
    }
    for (pad, &v) in voltages.volts.iter().enumerate() {
        if !(v.is_finite() && (0.0..=layout.max_voltage).contains(&v)) {
            return Err(Error::VoltageOutOfRange {
                pad,
                volts: v,
                max: layout.max_voltage,
            });
        }
    }
    let shape = geom.shape();
    let mut map = PressureMap::zeros(shape);
    for pad in &layout.pads {
        let p = parallel_plate_pressure(voltages.volts[pad.index], geom.gap);
        if p == 0.0 {
            continue;
        }
        for (i, j) in shape.nodes_in(&pad.rect) {
            map.values[shape.index(i, j)] = p;
        }
    }
    Ok(map)
}

/// Membrane displacement on the node grid [m]. Boundary nodes are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub shape: GridShape,
    pub values: Vec<f64>,
}

impl DeformationField {
    pub fn zeros(shape: GridShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.shape.index(i, j)]
    }

    /// Value at the node nearest to `(x, y)`.
    pub fn nearest(&self, x: f64, y: f64) -> f64 {
        let i = ((x / self.shape.dx).round().max(0.0) as usize).min(self.shape.nx - 1);
        let j = ((y / self.shape.dy).round().max(0.0) as usize).min(self.shape.ny - 1);
        self.at(i, j)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `Σ coeffs[k] * fields[k]`; all fields must share one grid.
    pub fn combine(fields: &[DeformationField], coeffs: &[f64]) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InvalidParameter("no fields to combine".into()))?;
        if coeffs.len() != fields.len() {
            return Err(Error::InvalidParameter(format!(
                "{} coefficients for {} fields",
                coeffs.len(),
                fields.len()
            )));
        }
        let mut out = DeformationField::zeros(first.shape);
        for (f, &c) in fields.iter().zip(coeffs) {
            if !f.shape.same_nodes(&first.shape) {
                return Err(Error::GridMismatch {
                    expected: (first.shape.nx, first.shape.ny),
                    got: (f.shape.nx, f.shape.ny),
                });
            }
            if c == 0.0 {
                continue;
            }
            for (o, v) in out.values.iter_mut().zip(&f.values) {
                *o += c * v;
            }
        }
        Ok(out)
    }

    /// Plain-text export: header `nx ny dx dy`, then one row of `nx` values per
    /// grid line `j = 0..ny`, scientific notation.
    pub fn write_grid<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "{} {} {:.9e} {:.9e}",
            self.shape.nx, self.shape.ny, self.shape.dx, self.shape.dy
        )?;
        let mut line = String::new();
        for j in 0..self.shape.ny {
            line.clear();
            for i in 0..self.shape.nx {
                if i > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{:.9e}", self.at(i, j));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_grid<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: "<grid>".into(),
            line: line + 1,
            message,
        };
        let (n0, header) = lines
            .next()
            .ok_or_else(|| parse_err(0, "empty grid file".into()))?;
        let header = header?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(parse_err(
                n0,
                format!("expected `nx ny dx dy`, got `{header}`"),
            ));
        }
        let nx: usize = h[0]
            .parse()
            .map_err(|e| parse_err(n0, format!("nx: {e}")))?;
        let ny: usize = h[1]
            .parse()
            .map_err(|e| parse_err(n0, format!("ny: {e}")))?;
        let dx: f64 = h[2]
            .parse()
            .map_err(|e| parse_err(n0, format!("dx: {e}")))?;
        let dy: f64 = h[3]
            .parse()
            .map_err(|e| parse_err(n0, format!("dy: {e}")))?;
        let shape = GridShape { nx, ny, dx, dy };
        let mut values = Vec::with_capacity(shape.len());
        for _ in 0..ny {
            let (n, line) = lines.next().ok_or_else(|| {
                parse_err(n0 + values.len() / nx.max(1) + 1, "truncated grid".into())
            })?;
            let line = line?;
            let row: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(str::parse::<f64>).collect();
            let row = row.map_err(|e| parse_err(n, e.to_string()))?;
            if row.len() != nx {
                return Err(parse_err(
                    n,
                    format!("expected {nx} values, got {}", row.len()),
                ));
            }
            values.extend(row);
        }
        Ok(Self { shape, values })
    }
}

/// Conjugate-gradient controls for [`solve_deformation_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when ‖r‖ / ‖b‖ drops below this.
    pub relative_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            relative_tolerance: 1e-10,
            max_iterations: 50_000,
        }
    }
}

pub fn solve_deformation(
    geom: &MembraneGeometry,
    pressure: &PressureMap,
) -> Result<DeformationField> {
    solve_deformation_with(geom, pressure, SolverOptions::default())
}

/// Solves `-Δₕ M = p / T` on the interior nodes with `M = 0` on the boundary.
pub fn solve_deformation_with(
    geom: &MembraneGeometry,
    pressure: &PressureMap,
    opts: SolverOptions,
) -> Result<DeformationField> {
    geom.validate()?;
    let shape = geom.shape();
    if !pressure.shape.same_nodes(&shape) {
        return Err(Error::GridMismatch {
            expected: (shape.nx, shape.ny),
            got: (pressure.shape.nx, pressure.shape.ny),
        });
    }
    let op = InteriorLaplacian::new(shape);
    let mut rhs = vec![0.0; op.len()];
    for j in 1..shape.ny - 1 {
        for i in 1..shape.nx - 1 {
            rhs[op.index(i, j)] = pressure.at(i, j) / geom.tension;
        }
    }
    let solution = conjugate_gradient(&op, &rhs, opts)?;
    let mut field = DeformationField::zeros(shape);
    for j in 1..shape.ny - 1 {
        for i in 1..shape.nx - 1 {
            field.values[shape.index(i, j)] = solution[op.index(i, j)];
        }
    }
    Ok(field)
}

/// Relative residual ‖(-Δₕ M) - p/T‖ / ‖p/T‖ over interior nodes.
pub fn relative_residual(
    geom: &MembraneGeometry,
    pressure: &PressureMap,
    field: &DeformationField,
) -> f64 {
    let shape = geom.shape();
    let (cx, cy) = (1.0 / (shape.dx * shape.dx), 1.0 / (shape.dy * shape.dy));
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 1..shape.ny - 1 {
        for i in 1..shape.nx - 1 {
            let m = field.at(i, j);
            let lap = cx * (2.0 * m - field.at(i - 1, j) - field.at(i + 1, j))
                + cy * (2.0 * m - field.at(i, j - 1) - field.at(i, j + 1));
            let b = pressure.at(i, j) / geom.tension;
            num += (lap - b).powi(2);
            den += b * b;
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Deflection with `max_voltage` on channel `pad` and every other channel grounded.
pub fn influence_function(
    geom: &MembraneGeometry,
    layout: &ElectrodeLayout,
    pad: usize,
) -> Result<DeformationField> {
    let count = layout.channel_count();
    if pad >= count {
        return Err(Error::InvalidPad { index: pad, count });
    }
    let v = VoltagePattern::single(count, pad, layout.max_voltage);
    let p = pressure_map(geom, layout, &v)?;
    solve_deformation(geom, &p)
}

/// Least-squares plane `z = mean + slope_x (x - xc) + slope_y (y - yc)` over a region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFit {
    pub mean: f64,
    /// rms of the residual after removing the fitted plane
    pub rms_deviation_from_best_fit_plane: f64,
    /// Magnitude of the fitted gradient relative to the undeformed membrane [rad]
    pub tilt: f64,
    pub slope_x: f64,
    pub slope_y: f64,
    pub nodes: usize,
}

pub fn sample_field(field: &DeformationField, region: &Rect) -> Result<PlaneFit> {
    let shape = field.shape;
    let domain = Rect::new(0.0, shape.x(shape.nx - 1), 0.0, shape.y(shape.ny - 1));
    if !region.is_valid() || !domain.contains_rect(region) {
        return Err(Error::RegionOutsideDomain(format!("{region:?}")));
    }
    let nodes = shape.nodes_in(region);
    if nodes.is_empty() {
        return Err(Error::RegionOutsideDomain(format!(
            "{region:?} contains no grid nodes"
        )));
    }
    let n = nodes.len() as f64;
    let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
    for &(i, j) in &nodes {
        sx += shape.x(i);
        sy += shape.y(j);
        sz += field.at(i, j);
    }
    let (xc, yc, mean) = (sx / n, sy / n, sz / n);
    let (mut sxx, mut syy, mut sxy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, j) in &nodes {
        let (u, v, z) = (shape.x(i) - xc, shape.y(j) - yc, field.at(i, j) - mean);
        sxx += u * u;
        syy += v * v;
        sxy += u * v;
        sxz += u * z;
        syz += v * z;
    }
    // Regions one node wide have no slope information along that axis.
    let det = sxx * syy - sxy * sxy;
    let (slope_x, slope_y) =
        if det.abs() > 1e-30 * (sxx * syy).max(f64::MIN_POSITIVE) && sxx > 0.0 && syy > 0.0 {
            ((syy * sxz - sxy * syz) / det, (sxx * syz - sxy * sxz) / det)
        } else if sxx > 0.0 {
            (sxz / sxx, 0.0)
        } else if syy > 0.0 {
            (0.0, syz / syy)
        } else {
            (0.0, 0.0)
        };
    let mut ss = 0.0;
    for &(i, j) in &nodes {
        let r = field.at(i, j) - (mean + slope_x * (shape.x(i) - xc) + slope_y * (shape.y(j) - yc));
        ss += r * r;
    }
    Ok(PlaneFit {
        mean,
        rms_deviation_from_best_fit_plane: (ss / n).sqrt(),
        tilt: slope_x.hypot(slope_y),
        slope_x,
        slope_y,
        nodes: nodes.len(),
    })
}

/// Matrix-free `-Δₕ` restricted to interior nodes.
struct InteriorLaplacian {
    ni: usize,
    nj: usize,
    cx: f64,
    cy: f64,
}

impl InteriorLaplacian {
    fn new(shape: GridShape) -> Self {
        Self {
            ni: shape.nx - 2,
            nj: shape.ny - 2,
            cx: 1.0 / (shape.dx * shape.dx),
            cy: 1.0 / (shape.dy * shape.dy),
        }
    }

    fn len(&self) -> usize {
        self.ni * self.nj
    }

    /// Interior slot of grid node `(i, j)`, both ≥ 1.
    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        (j - 1) * self.ni + (i - 1)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (ni, nj) = (self.ni, self.nj);
        let diag = 2.0 * (self.cx + self.cy);
        for j in 0..nj {
            let row = j * ni;
            for i in 0..ni {
                let k = row + i;
                let mut acc = diag * x[k];
                if i > 0 {
                    acc -= self.cx * x[k - 1];
                }
                if i + 1 < ni {
                    acc -= self.cx * x[k + 1];
                }
                if j > 0 {
                    acc -= self.cy * x[k - ni];
                }
                if j + 1 < nj {
                    acc -= self.cy * x[k + ni];
                }
                y[k] = acc;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conjugate_gradient(op: &InteriorLaplacian, b: &[f64], opts: SolverOptions) -> Result<Vec<f64>> {
    let n = op.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let target = opts.relative_tolerance * b_norm;
    for _ in 0..opts.max_iterations {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        op.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_next;
    }
    // The recursive residual drifts from the true one; check the real thing
    // before giving up.
    op.apply(&x, &mut ap);
    let true_rr: f64 = ap.iter().zip(b).map(|(a, b)| (b - a).powi(2)).sum();
    if true_rr.sqrt() <= target {
        return Ok(x);
    }
    Err(Error::NotConverged {
        iterations: opts.max_iterations,
        residual: true_rr.sqrt() / b_norm,
    })
}
