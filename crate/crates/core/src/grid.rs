//! Uniform cell-centered grid, multi-population density fields and
//! their discrete norms.
//!
//! Scalar arrays are `Array2<f64>` of shape `(nx, ny)`, indexed `[[i, j]]`
//! with `i` along x and `j` along y.

use std::sync::Arc;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x_min, x_max] × [y_min, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Rect {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        !(self.x_max > self.x_min && self.y_max > self.y_min)
    }

    /// Containment with an absolute slack `tol` on every side.
    pub fn contains_rect(&self, other: &Rect, tol: f64) -> bool {
        other.x_min >= self.x_min - tol
            && other.x_max <= self.x_max + tol
            && other.y_min >= self.y_min - tol
            && other.y_max <= self.y_max + tol
    }

    /// Mirror image across the vertical axis `x = 0`.
    pub fn mirror_x(&self) -> Rect {
        Rect::new(-self.x_max, -self.x_min, self.y_min, self.y_max)
    }
}

/// Axis-aligned boundary segment from `(x0, y0)` to `(x1, y1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Segment {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Segment { x0, y0, x1, y1 }
    }

    /// `{x} × [y0, y1]`
    pub const fn vertical(x: f64, y0: f64, y1: f64) -> Self {
        Segment::new(x, y0, x, y1)
    }

    /// `[x0, x1] × {y}`
    pub const fn horizontal(y: f64, x0: f64, x1: f64) -> Self {
        Segment::new(x0, y, x1, y)
    }

    fn is_vertical(&self) -> bool {
        self.x0 == self.x1
    }

    fn is_horizontal(&self) -> bool {
        self.y0 == self.y1
    }

    fn covers(&self, lo: f64, hi: f64, t: f64) -> bool {
        let (a, b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        t >= a && t <= b
    }
}

/// Which side of the numerical domain a boundary face belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    West,
    East,
    South,
    North,
}

/// Uniform rectangular grid with walkable room and exit segments.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    pub room: Rect,
    pub exits: Vec<Segment>,
    exit_west: Vec<bool>,
    exit_east: Vec<bool>,
    exit_south: Vec<bool>,
    exit_north: Vec<bool>,
}

const DIVISIBILITY_TOL: f64 = 1e-9;

fn cell_count(length: f64, step: f64, axis: &str) -> Result<usize> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::config(format!(
            "cell size along {axis} must be positive"
        )));
    }
    let ratio = length / step;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > DIVISIBILITY_TOL * n.max(1.0) {
        return Err(Error::config(format!(
            "extent not divisible along {axis}: length {length} / cell size {step} = {ratio}"
        )));
    }
    Ok(n as usize)
}

/// Builds a grid tiling `bounds` with cells of size `dx × dy`.
pub fn make_grid(
    bounds: Rect,
    dx: f64,
    dy: f64,
    room: Rect,
    exits: Vec<Segment>,
) -> Result<GridSpec> {
    if bounds.is_empty() {
        return Err(Error::config("grid bounds are empty"));
    }
    let nx = cell_count(bounds.width(), dx, "x")?;
    let ny = cell_count(bounds.height(), dy, "y")?;
    if nx < 2 || ny < 2 {
        return Err(Error::config(format!(
            "grid needs at least 2 cells per axis, got {nx} x {ny}"
        )));
    }
    let tol = 1e-9 * bounds.width().max(bounds.height());
    if room.is_empty() || !bounds.contains_rect(&room, tol) {
        return Err(Error::config(
            "room must be a nonempty rectangle inside the grid bounds",
        ));
    }
    for e in &exits {
        let on_vertical_side = e.is_vertical()
            && ((e.x0 - bounds.x_min).abs() <= tol || (e.x0 - bounds.x_max).abs() <= tol);
        let on_horizontal_side = e.is_horizontal()
            && ((e.y0 - bounds.y_min).abs() <= tol || (e.y0 - bounds.y_max).abs() <= tol);
        if !(on_vertical_side || on_horizontal_side) {
            return Err(Error::config(format!(
                "exit segment {e:?} does not lie on the domain boundary"
            )));
        }
    }

    let mut grid = GridSpec {
        x0: bounds.x_min,
        y0: bounds.y_min,
        dx: bounds.width() / nx as f64,
        dy: bounds.height() / ny as f64,
        nx,
        ny,
        room,
        exits,
        exit_west: vec![false; ny],
        exit_east: vec![false; ny],
        exit_south: vec![false; nx],
        exit_north: vec![false; nx],
    };
    for e in grid.exits.clone() {
        if e.is_vertical() {
            let mask = if (e.x0 - bounds.x_min).abs() <= tol {
                &mut grid.exit_west
            } else {
                &mut grid.exit_east
            };
            for (j, m) in mask.iter_mut().enumerate() {
                let y = bounds.y_min + (j as f64 + 0.5) * grid.dy;
                *m |= e.covers(e.y0, e.y1, y);
            }
        } else {
            let mask = if (e.y0 - bounds.y_min).abs() <= tol {
                &mut grid.exit_south
            } else {
                &mut grid.exit_north
            };
            for (i, m) in mask.iter_mut().enumerate() {
                let x = bounds.x_min + (i as f64 + 0.5) * grid.dx;
                *m |= e.covers(e.x0, e.x1, x);
            }
        }
    }
    Ok(grid)
}

impl GridSpec {
    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(
            self.x0,
            self.x0 + self.nx as f64 * self.dx,
            self.y0,
            self.y0 + self.ny as f64 * self.dy,
        )
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        self.x0 + (i as f64 + 0.5) * self.dx
    }

    #[inline]
    pub fn y_center(&self, j: usize) -> f64 {
        self.y0 + (j as f64 + 0.5) * self.dy
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Whether the boundary face of cell `k` (a row index for West/East,
    /// a column index for South/North) lies on an exit.
    pub fn is_exit(&self, side: Side, k: usize) -> bool {
        match side {
            Side::West => self.exit_west[k],
            Side::East => self.exit_east[k],
            Side::South => self.exit_south[k],
            Side::North => self.exit_north[k],
        }
    }

    pub fn has_exits(&self) -> bool {
        !self.exits.is_empty()
    }

    pub fn zeros(&self) -> Array2<f64> {
        Array2::zeros(self.shape())
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        Array2::from_shape_fn(self.shape(), |(i, j)| f(self.x_center(i), self.y_center(j)))
    }

    fn check_shape(&self, a: &Array2<f64>) -> Result<()> {
        if a.dim() != self.shape() {
            return Err(Error::Dimension {
                expected: self.shape(),
                found: a.dim(),
            });
        }
        Ok(())
    }

    /// Discrete L¹ norm `Σ |a_ij| dx dy`.
    pub fn l1(&self, a: &Array2<f64>) -> f64 {
        a.iter().map(|v| v.abs()).sum::<f64>() * self.cell_area()
    }

    pub fn linf(&self, a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Forward-difference total variation weighted by the transverse cell size.
    pub fn tv(&self, a: &Array2<f64>) -> f64 {
        let (nx, ny) = self.shape();
        let mut jumps_x = 0.0;
        let mut jumps_y = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                let v = a[[i, j]];
                if i + 1 < nx {
                    jumps_x += (a[[i + 1, j]] - v).abs();
                }
                if j + 1 < ny {
                    jumps_y += (a[[i, j + 1]] - v).abs();
                }
            }
        }
        jumps_x * self.dy + jumps_y * self.dx
    }

    pub fn integral(&self, a: &Array2<f64>) -> f64 {
        a.sum() * self.cell_area()
    }
}

/// Cell averages of `value · 1_rect` computed from exact overlap areas.
pub fn indicator_datum(grid: &GridSpec, value: f64, rect: Rect) -> Result<Array2<f64>> {
    let b = grid.bounds();
    let tol = 1e-9 * b.width().max(b.height());
    if rect.is_empty() || !b.contains_rect(&rect, tol) {
        return Err(Error::config(format!(
            "indicator rectangle {rect:?} is not inside the grid bounds {b:?}"
        )));
    }
    let overlap = |lo: f64, hi: f64, a: f64, c: f64| (hi.min(c) - lo.max(a)).max(0.0);
    let fx: Vec<f64> = (0..grid.nx)
        .map(|i| {
            let lo = grid.x0 + i as f64 * grid.dx;
            overlap(lo, lo + grid.dx, rect.x_min, rect.x_max) / grid.dx
        })
        .collect();
    let fy: Vec<f64> = (0..grid.ny)
        .map(|j| {
            let lo = grid.y0 + j as f64 * grid.dy;
            overlap(lo, lo + grid.dy, rect.y_min, rect.y_max) / grid.dy
        })
        .collect();
    Ok(Array2::from_shape_fn(grid.shape(), |(i, j)| {
        value * fx[i] * fy[j]
    }))
}

/// The state `ρ = (ρ¹, …, ρⁿ)` on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationField {
    grid: Arc<GridSpec>,
    data: Vec<Array2<f64>>,
}

impl PopulationField {
    pub fn new(grid: Arc<GridSpec>, data: Vec<Array2<f64>>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::config(
                "a population field needs at least one population",
            ));
        }
        for a in &data {
            grid.check_shape(a)?;
        }
        Ok(PopulationField { grid, data })
    }

    pub fn zeros(grid: Arc<GridSpec>, n: usize) -> Self {
        let data = (0..n).map(|_| grid.zeros()).collect();
        PopulationField { grid, data }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<GridSpec> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn population(&self, i: usize) -> &Array2<f64> {
        &self.data[i]
    }

    pub fn population_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.data[i]
    }

    pub fn populations(&self) -> &[Array2<f64>] {
        &self.data
    }

    pub fn into_populations(self) -> Vec<Array2<f64>> {
        self.data
    }

    pub fn same_layout(&self, other: &PopulationField) -> bool {
        self.n() == other.n() && *self.grid == *other.grid
    }

    pub fn check_finite(&self) -> Result<()> {
        for (p, a) in self.data.iter().enumerate() {
            if let Some(((i, j), _)) = a.indexed_iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    population: p,
                    i,
                    j,
                });
            }
        }
        Ok(())
    }

    pub fn mass(&self, i: usize) -> f64 {
        self.grid.integral(&self.data[i])
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.n()).map(|i| self.mass(i)).sum()
    }

    /// `self + h · other`
    pub fn add_scaled(&self, h: f64, other: &PopulationField) -> PopulationField {
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| Zip::from(a).and(b).map_collect(|&x, &y| x + h * y))
            .collect();
        PopulationField {
            grid: self.grid.clone(),
            data,
        }
    }

    pub fn scaled(&self, c: f64) -> PopulationField {
        PopulationField {
            grid: self.grid.clone(),
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    /// `Σ_i ‖self^i − other^i‖_L1`
    pub fn l1_distance(&self, other: &PopulationField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                Zip::from(a)
                    .and(b)
                    .fold(0.0, |acc, &x, &y| acc + (x - y).abs())
                    * self.grid.cell_area()
            })
            .sum()
    }

    pub fn min_max(&self, i: usize) -> (f64, f64) {
        self.data[i]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// A 2-vector per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl VectorField {
    pub fn zeros(shape: (usize, usize)) -> Self {
        VectorField {
            x: Array2::zeros(shape),
            y: Array2::zeros(shape),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.x.dim()
    }

    /// Euclidean magnitude per cell.
    pub fn magnitude(&self) -> Array2<f64> {
        Zip::from(&self.x)
            .and(&self.y)
            .map_collect(|&a, &b| a.hypot(b))
    }

    pub fn max_magnitude(&self) -> f64 {
        Zip::from(&self.x)
            .and(&self.y)
            .fold(0.0_f64, |m, &a, &b| m.max(a.hypot(b)))
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        VectorField {
            x: &self.x * c,
            y: &self.y * c,
        }
    }

    pub fn add_assign_scaled(&mut self, c: f64, other: &VectorField) {
        self.x.scaled_add(c, &other.x);
        self.y.scaled_add(c, &other.y);
    }

    /// Multiplies both components cellwise by a scalar field.
    pub fn weighted(&self, w: &Array2<f64>) -> VectorField {
        VectorField {
            x: &self.x * w,
            y: &self.y * w,
        }
    }
}

/// Per-population discrete norms; totals follow the convention
/// `TV(ρ) = Σ_i TV(ρ^i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormRecord {
    pub l1: Vec<f64>,
    pub linf: Vec<f64>,
    pub tv: Vec<f64>,
}

impl NormRecord {
    pub fn l1_total(&self) -> f64 {
        self.l1.iter().sum()
    }

    pub fn linf_total(&self) -> f64 {
        self.linf.iter().sum()
    }

    pub fn tv_total(&self) -> f64 {
        self.tv.iter().sum()
    }
}

pub fn norms(field: &PopulationField) -> Result<NormRecord> {
    field.check_finite()?;
    let g = field.grid();
    Ok(NormRecord {
        l1: field.populations().iter().map(|a| g.l1(a)).collect(),
        linf: field.populations().iter().map(|a| g.linf(a)).collect(),
        tv: field.populations().iter().map(|a| g.tv(a)).collect(),
    })
}

/// Central-difference operators on interior cells. Matrices and vectors are
/// measured in the entrywise 1-norm.
impl GridSpec {
    /// `∂x u_x + ∂y u_y`, zero on the outer cell ring.
    pub fn divergence(&self, u: &VectorField) -> Array2<f64> {
        let (nx, ny) = u.dim();
        let mut d = Array2::zeros((nx, ny));
        for i in 1..nx.saturating_sub(1) {
            for j in 1..ny.saturating_sub(1) {
                d[[i, j]] = (u.x[[i + 1, j]] - u.x[[i - 1, j]]) / (2.0 * self.dx)
                    + (u.y[[i, j + 1]] - u.y[[i, j - 1]]) / (2.0 * self.dy);
            }
        }
        d
    }

    /// Entrywise 1-norm of the central-difference gradient, per cell.
    pub fn gradient_norm(&self, a: &Array2<f64>) -> Array2<f64> {
        let (nx, ny) = a.dim();
        let mut g = Array2::zeros((nx, ny));
        for i in 1..nx.saturating_sub(1) {
            for j in 1..ny.saturating_sub(1) {
                g[[i, j]] = ((a[[i + 1, j]] - a[[i - 1, j]]) / (2.0 * self.dx)).abs()
                    + ((a[[i, j + 1]] - a[[i, j - 1]]) / (2.0 * self.dy)).abs();
            }
        }
        g
    }

    /// Entrywise 1-norm of the second-difference Hessian, per cell.
    pub fn hessian_norm(&self, a: &Array2<f64>) -> Array2<f64> {
        let (nx, ny) = a.dim();
        let mut h = Array2::zeros((nx, ny));
        for i in 1..nx.saturating_sub(1) {
            for j in 1..ny.saturating_sub(1) {
                let axx = (a[[i + 1, j]] - 2.0 * a[[i, j]] + a[[i - 1, j]]) / (self.dx * self.dx);
                let ayy = (a[[i, j + 1]] - 2.0 * a[[i, j]] + a[[i, j - 1]]) / (self.dy * self.dy);
                let axy = (a[[i + 1, j + 1]] - a[[i + 1, j - 1]] - a[[i - 1, j + 1]]
                    + a[[i - 1, j - 1]])
                    / (4.0 * self.dx * self.dy);
                h[[i, j]] = axx.abs() + 2.0 * axy.abs() + ayy.abs();
            }
        }
        h
    }

    /// `sup |∇u|` of a vector field.
    pub fn jacobian_sup(&self, u: &VectorField) -> f64 {
        let j = self.gradient_norm(&u.x) + self.gradient_norm(&u.y);
        j.iter().fold(0.0_f64, |m, &v| m.max(v))
    }

    /// `‖∇u‖_L1` of a vector field.
    pub fn jacobian_l1(&self, u: &VectorField) -> f64 {
        self.l1(&self.gradient_norm(&u.x)) + self.l1(&self.gradient_norm(&u.y))
    }

    /// `‖∇²u‖_L1` of a vector field.
    pub fn hessian_l1(&self, u: &VectorField) -> f64 {
        self.l1(&self.hessian_norm(&u.x)) + self.l1(&self.hessian_norm(&u.y))
    }

    /// `‖∇ div u‖_L1`, on cells two away from the border.
    pub fn grad_div_l1(&self, u: &VectorField) -> f64 {
        let mut g = self.gradient_norm(&self.divergence(u));
        let (nx, ny) = g.dim();
        for i in 0..nx {
            for j in 0..ny {
                if i < 2 || j < 2 || i + 2 >= nx || j + 2 >= ny {
                    g[[i, j]] = 0.0;
                }
            }
        }
        self.l1(&g)
    }

    /// `sup |u|` in the 1-norm.
    pub fn vector_sup(&self, u: &VectorField) -> f64 {
        u.x.iter()
            .zip(u.y.iter())
            .fold(0.0_f64, |m, (a, b)| m.max(a.abs() + b.abs()))
    }

    /// `‖u‖_L1` in the 1-norm.
    pub fn vector_l1(&self, u: &VectorField) -> f64 {
        self.l1(&u.x) + self.l1(&u.y)
    }
}
