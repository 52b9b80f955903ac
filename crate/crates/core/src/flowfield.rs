//! Cell-centered velocity fields, flow scenarios, and the plain-text field
//! formats.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::StructuredGrid;
use crate::sparse::{fmt_f64, LineReader};

pub const FIELD_MAGIC: &str = "# pfsensor-field v1";
pub const SCALAR_MAGIC: &str = "# pfsensor-scalar v1";

/// Velocity components (m/s) at cell centers, indexed by state.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    grid: StructuredGrid,
    u: Vec<f64>,
    v: Vec<f64>,
    w: Vec<f64>,
}

impl VelocityField {
    pub fn new(grid: StructuredGrid, u: Vec<f64>, v: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let n = grid.n_states();
        for (name, c) in [("u", &u), ("v", &v), ("w", &w)] {
            if c.len() != n {
                return Err(Error::invalid(format!(
                    "component {name} has {} values, grid has {n} states",
                    c.len()
                )));
            }
            if let Some(k) = c.iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(format!("component {name} is not finite at state {k}")));
            }
        }
        Ok(Self { grid, u, v, w })
    }

    pub fn zeros(grid: StructuredGrid) -> Self {
        let n = grid.n_states();
        Self {
            grid,
            u: vec![0.0; n],
            v: vec![0.0; n],
            w: vec![0.0; n],
        }
    }

    /// Uniform velocity everywhere.
    pub fn uniform(grid: StructuredGrid, velocity: [f64; 3]) -> Result<Self> {
        let n = grid.n_states();
        Self::new(grid, vec![velocity[0]; n], vec![velocity[1]; n], vec![velocity[2]; n])
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        match axis {
            0 => &self.u,
            1 => &self.v,
            _ => &self.w,
        }
    }

    /// Normal velocity on the face between `state` and its `+axis` neighbor,
    /// as the mean of the two cell values.
    #[inline]
    pub fn face_velocity(&self, state: usize, neighbor: usize, axis: usize) -> f64 {
        let c = self.component(axis);
        0.5 * (c[state] + c[neighbor])
    }

    /// Central-difference divergence at interior cells; boundary cells get 0.
    pub fn central_divergence(&self) -> Vec<f64> {
        let g = &self.grid;
        let h = g.spacing();
        (0..g.n_states())
            .map(|k| {
                let mut div = 0.0;
                for axis in 0..3 {
                    if g.dims()[axis] == 1 {
                        continue;
                    }
                    match (g.neighbor(k, axis, false), g.neighbor(k, axis, true)) {
                        (Some(lo), Some(hi)) => {
                            let c = self.component(axis);
                            div += (c[hi] - c[lo]) / (2.0 * h[axis]);
                        }
                        _ => return 0.0,
                    }
                }
                div
            })
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let s = |c: &[f64]| c.iter().map(|x| factor * x).collect();
        Self {
            grid: self.grid.clone(),
            u: s(&self.u),
            v: s(&self.v),
            w: s(&self.w),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = grid_header(FIELD_MAGIC, &self.grid);
        for k in 0..self.grid.n_states() {
            writeln!(s, "{} {} {}", fmt_f64(self.u[k]), fmt_f64(self.v[k]), fmt_f64(self.w[k])).unwrap();
        }
        s
    }

    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut r = LineReader::new(name, text);
        r.expect_magic(FIELD_MAGIC)?;
        let grid = read_grid_header(&mut r)?;
        let n = grid.n_states();
        let (mut u, mut v, mut w) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let rec: Vec<f64> = r.fields(3, "velocity record `u v w`")?;
            for x in &rec {
                r.finite(*x, "velocity record")?;
            }
            u.push(rec[0]);
            v.push(rec[1]);
            w.push(rec[2]);
        }
        r.expect_end()?;
        Self::new(grid, u, v, w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Reads a velocity field file.
pub fn load_field(path: impl AsRef<Path>) -> Result<VelocityField> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    VelocityField::parse(&path.display().to_string(), &text)
}

/// Single-vortex stream-function flow `psi = sin(pi x / Lx) sin(pi y / Ly)`
/// with `u = strength * dpsi/dy`, `v = -strength * dpsi/dx`, sampled at cell
/// centers. Normal velocity vanishes on the domain walls.
pub fn synth_recirculating(grid: &StructuredGrid, strength: f64) -> Result<VelocityField> {
    if !grid.is_2d() {
        return Err(Error::UnsupportedDimension(format!(
            "recirculating flow needs a 2D grid, got nz = {}",
            grid.dims()[2]
        )));
    }
    if !strength.is_finite() {
        return Err(Error::invalid("vortex strength must be finite"));
    }
    let [lx, ly, _] = grid.lengths();
    let o = grid.origin();
    let n = grid.n_states();
    let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (ax, ay) = (std::f64::consts::PI / lx, std::f64::consts::PI / ly);
    for k in 0..n {
        let c = grid.center_of(grid.ijk_unchecked(k));
        let (x, y) = (c[0] - o[0], c[1] - o[1]);
        u.push(strength * (ay * (ax * x).sin() * (ay * y).cos()));
        v.push(strength * (-ax * (ax * x).cos() * (ay * y).sin()));
    }
    VelocityField::new(grid.clone(), u, v, vec![0.0; n])
}

/// A velocity realization with its diffusivity, sample value, and weight.
#[derive(Debug, Clone)]
pub struct FlowScenario {
    pub field: VelocityField,
    diffusivity: f64,
    pub sample_value: f64,
    weight: f64,
}

impl FlowScenario {
    pub fn new(field: VelocityField, diffusivity: f64, sample_value: f64, weight: f64) -> Result<Self> {
        if !(diffusivity.is_finite() && diffusivity >= 0.0) {
            return Err(Error::invalid(format!("diffusivity must be >= 0, got {diffusivity}")));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::invalid(format!("scenario weight must lie in [0, 1], got {weight}")));
        }
        Ok(Self {
            field,
            diffusivity,
            sample_value,
            weight,
        })
    }

    /// Deterministic scenario with weight 1.
    pub fn single(field: VelocityField, diffusivity: f64) -> Result<Self> {
        Self::new(field, diffusivity, 0.0, 1.0)
    }

    pub fn grid(&self) -> &StructuredGrid {
        self.field.grid()
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

fn grid_header(magic: &str, grid: &StructuredGrid) -> String {
    let mut s = String::new();
    let [nx, ny, nz] = grid.dims();
    let h = grid.spacing();
    let o = grid.origin();
    writeln!(s, "{magic}").unwrap();
    writeln!(s, "{nx} {ny} {nz}").unwrap();
    writeln!(s, "{} {} {}", fmt_f64(h[0]), fmt_f64(h[1]), fmt_f64(h[2])).unwrap();
    writeln!(s, "{} {} {}", fmt_f64(o[0]), fmt_f64(o[1]), fmt_f64(o[2])).unwrap();
    s
}

fn read_grid_header(r: &mut LineReader<'_>) -> Result<StructuredGrid> {
    let dims: Vec<usize> = r.fields(3, "grid dims `nx ny nz`")?;
    let spacing: Vec<f64> = r.fields(3, "grid spacing `dx dy dz`")?;
    let origin: Vec<f64> = r.fields(3, "grid origin `x0 y0 z0`")?;
    StructuredGrid::new(
        [dims[0], dims[1], dims[2]],
        [spacing[0], spacing[1], spacing[2]],
        [origin[0], origin[1], origin[2]],
    )
    .map_err(|e| r.err(e.to_string()))
}

/// Per-state scalar (concentration, coverage) in the grid-header text format
/// with one value per line.
pub fn scalar_field_text(grid: &StructuredGrid, values: &[f64]) -> Result<String> {
    if values.len() != grid.n_states() {
        return Err(Error::invalid(format!(
            "scalar field has {} values, grid has {} states",
            values.len(),
            grid.n_states()
        )));
    }
    let mut s = grid_header(SCALAR_MAGIC, grid);
    for v in values {
        writeln!(s, "{}", fmt_f64(*v)).unwrap();
    }
    Ok(s)
}

pub fn parse_scalar_field(name: &str, text: &str) -> Result<(StructuredGrid, Vec<f64>)> {
    let mut r = LineReader::new(name, text);
    r.expect_magic(SCALAR_MAGIC)?;
    let grid = read_grid_header(&mut r)?;
    let mut values = Vec::with_capacity(grid.n_states());
    for _ in 0..grid.n_states() {
        let v: Vec<f64> = r.fields(1, "scalar value")?;
        values.push(r.finite(v[0], "scalar value")?);
    }
    r.expect_end()?;
    Ok((grid, values))
}

pub fn save_scalar_field(path: impl AsRef<Path>, grid: &StructuredGrid, values: &[f64]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scalar_field_text(grid, values)?).map_err(|e| Error::io(path, e))
}

pub fn load_scalar_field(path: impl AsRef<Path>) -> Result<(StructuredGrid, Vec<f64>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scalar_field(&path.display().to_string(), &text)
}
