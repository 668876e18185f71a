//! Speed laws, preferred-direction fields and velocity assembly for the
//! two model families.

use std::sync::Arc;

use log::warn;
use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, PopulationField, VectorField};
use crate::kernel::{convolve, SampledKernel};
use crate::nonlocal::NonlocalOp;

const NORM_SCAN_POINTS: usize = 100_000;

/// Sup norms on `[0, R]` of a speed law and of its flux `q(ρ) = ρ v(ρ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedNorms {
    pub v: f64,
    pub dv: f64,
    pub d2v: f64,
    pub q: f64,
    pub dq: f64,
}

/// Polynomial speed law `v(ρ) = Σ c_k ρ^k` with maximal density `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedLaw {
    coeffs: Vec<f64>,
    pub r_max: f64,
    norms: SpeedNorms,
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
}

fn derive(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &ck)| k as f64 * ck)
        .collect()
}

/// Max of `|f|` on `[0, r]` from an equispaced scan, optionally polished by
/// golden-section search around the best node.
fn sup_abs(f: &dyn Fn(f64) -> f64, r: f64, points: usize, refine: bool) -> f64 {
    let node = |k: usize| r * k as f64 / points as f64;
    let (best_k, best) = (0..=points)
        .map(|k| (k, f(node(k)).abs()))
        .fold((0, 0.0_f64), |acc, c| if c.1 > acc.1 { c } else { acc });
    if !refine {
        return best;
    }
    let (mut a, mut b) = (
        node(best_k.saturating_sub(1)),
        node((best_k + 1).min(points)),
    );
    let phi = 0.5 * (5.0_f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c).abs() > f(d).abs() {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b)).abs())
}

impl SpeedLaw {
    pub fn polynomial(coeffs: Vec<f64>, r_max: f64) -> Result<Self> {
        if !(r_max > 0.0) || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::config(
                "speed law needs R > 0 and finite coefficients",
            ));
        }
        let mut law = SpeedLaw {
            coeffs,
            r_max,
            norms: SpeedNorms {
                v: 0.0,
                dv: 0.0,
                d2v: 0.0,
                q: 0.0,
                dq: 0.0,
            },
        };
        law.norms = law.norms_with(NORM_SCAN_POINTS, true);
        Ok(law)
    }

    /// `v(ρ) = v_max (1 − ρ/R)`
    pub fn linear(v_max: f64, r_max: f64) -> Result<Self> {
        SpeedLaw::polynomial(vec![v_max, -v_max / r_max], r_max)
    }

    pub fn constant(v: f64, r_max: f64) -> Result<Self> {
        SpeedLaw::polynomial(vec![v], r_max)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    #[inline]
    pub fn v(&self, rho: f64) -> f64 {
        horner(&self.coeffs, rho)
    }

    #[inline]
    pub fn dv(&self, rho: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * rho + k as f64 * c;
        }
        acc
    }

    pub fn d2v(&self, rho: f64) -> f64 {
        horner(&derive(&derive(&self.coeffs)), rho)
    }

    #[inline]
    pub fn q(&self, rho: f64) -> f64 {
        rho * self.v(rho)
    }

    #[inline]
    pub fn dq(&self, rho: f64) -> f64 {
        self.v(rho) + rho * self.dv(rho)
    }

    pub fn norms(&self) -> SpeedNorms {
        self.norms
    }

    /// Sup norms sampled on `points + 1` equispaced nodes of `[0, R]`.
    pub fn scan_norms(&self, points: usize) -> SpeedNorms {
        self.norms_with(points, false)
    }

    fn norms_with(&self, points: usize, refine: bool) -> SpeedNorms {
        let d2 = derive(&derive(&self.coeffs));
        let sup = |f: &dyn Fn(f64) -> f64| sup_abs(f, self.r_max, points, refine);
        SpeedNorms {
            v: sup(&|r| self.v(r)),
            dv: sup(&|r| self.dv(r)),
            d2v: sup(&|r| horner(&d2, r)),
            q: sup(&|r| self.q(r)),
            dq: sup(&|r| self.dq(r)),
        }
    }

    /// `v(R) = 0`, required by the deviation family.
    pub fn vanishes_at_max_density(&self) -> bool {
        self.v(self.r_max).abs() <= 1e-12 * (1.0 + self.norms.v)
    }
}

/// Preferred direction `g + δ` sampled per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionField {
    pub geodesic: VectorField,
    pub discomfort: VectorField,
    pub total: VectorField,
    pub delta_max: f64,
    pub delta_r: f64,
}

impl DirectionField {
    pub fn from_parts(
        geodesic: VectorField,
        discomfort: VectorField,
        delta_max: f64,
        delta_r: f64,
    ) -> Result<Self> {
        if geodesic.dim() != discomfort.dim() {
            return Err(Error::Dimension {
                expected: geodesic.dim(),
                found: discomfort.dim(),
            });
        }
        let total = VectorField {
            x: &geodesic.x + &discomfort.x,
            y: &geodesic.y + &discomfort.y,
        };
        Ok(DirectionField {
            geodesic,
            discomfort,
            total,
            delta_max,
            delta_r,
        })
    }

    /// Constant direction everywhere, no wall discomfort.
    pub fn uniform(grid: &GridSpec, g: [f64; 2]) -> Self {
        let geodesic = VectorField {
            x: Array2::from_elem(grid.shape(), g[0]),
            y: Array2::from_elem(grid.shape(), g[1]),
        };
        let discomfort = VectorField::zeros(grid.shape());
        DirectionField::from_parts(geodesic, discomfort, 0.0, 0.0).expect("same shape")
    }

    /// Constant geodesic `g` inside the room and zero outside, plus the
    /// wall discomfort field.
    pub fn corridor(grid: &GridSpec, g: [f64; 2], delta_max: f64, delta_r: f64) -> Result<Self> {
        let room = grid.room;
        let inside = |x: f64, y: f64| {
            x >= room.x_min && x <= room.x_max && y >= room.y_min && y <= room.y_max
        };
        let geodesic = VectorField {
            x: grid.sample(|x, y| if inside(x, y) { g[0] } else { 0.0 }),
            y: grid.sample(|x, y| if inside(x, y) { g[1] } else { 0.0 }),
        };
        let delta = discomfort(grid, delta_max, delta_r)?;
        DirectionField::from_parts(geodesic, delta, delta_max, delta_r)
    }

    pub fn dim(&self) -> (usize, usize) {
        self.total.dim()
    }
}

#[derive(Clone, Copy, Debug)]
struct Wall {
    /// Coordinate of the wall line.
    at: f64,
    /// Wall is `x = at` (true) or `y = at` (false).
    vertical: bool,
    /// Inward unit normal component along the wall-normal axis.
    inward: f64,
}

fn room_walls(grid: &GridSpec) -> Vec<Wall> {
    let b = grid.bounds();
    let r = grid.room;
    let tol = 1e-9 * b.width().max(b.height());
    let exit_on = |vertical: bool, at: f64| {
        grid.exits.iter().any(|e| {
            if vertical {
                e.x0 == e.x1 && (e.x0 - at).abs() <= tol
            } else {
                e.y0 == e.y1 && (e.y0 - at).abs() <= tol
            }
        })
    };
    let candidates = [
        (r.x_min, true, 1.0, b.x_min),
        (r.x_max, true, -1.0, b.x_max),
        (r.y_min, false, 1.0, b.y_min),
        (r.y_max, false, -1.0, b.y_max),
    ];
    candidates
        .into_iter()
        .filter(|&(at, vertical, _, edge)| (at - edge).abs() > tol || !exit_on(vertical, at))
        .map(|(at, vertical, inward, _)| Wall {
            at,
            vertical,
            inward,
        })
        .collect()
}

/// Wall discomfort: perpendicular to the room walls, pointing inward, of
/// modulus `δ_max` on the wall-adjacent cell layer, decreasing linearly to
/// zero at distance `δ_r`. Cells beyond a wall are pushed back with modulus
/// `δ_max`.
pub fn discomfort(grid: &GridSpec, delta_max: f64, delta_r: f64) -> Result<VectorField> {
    if !(delta_r > 0.0) || delta_max < 0.0 {
        return Err(Error::config(
            "discomfort needs delta_r > 0 and delta_max >= 0",
        ));
    }
    let walls = room_walls(grid);
    let mut out = VectorField::zeros(grid.shape());
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let (mut dxv, mut dyv) = (0.0, 0.0);
            for w in &walls {
                let (idx, origin, cell) = if w.vertical {
                    (i, grid.x0, grid.dx)
                } else {
                    (j, grid.y0, grid.dy)
                };
                // signed distance, positive on the room side, measured in
                // cells so mirrored walls give bitwise mirrored values
                let mut wall_cells = (w.at - origin) / cell;
                if (wall_cells - wall_cells.round()).abs() < 1e-9 {
                    wall_cells = wall_cells.round();
                }
                let dist = (idx as f64 + 0.5 - wall_cells) * w.inward * cell;
                let magnitude = if dist <= 0.0 || dist < cell {
                    delta_max
                } else {
                    delta_max * (1.0 - dist / delta_r).max(0.0)
                };
                if w.vertical {
                    dxv += magnitude * w.inward;
                } else {
                    dyv += magnitude * w.inward;
                }
            }
            out.x[[i, j]] = dxv;
            out.y[[i, j]] = dyv;
        }
    }
    Ok(out)
}

/// One velocity vector per cell per population.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    pub t: f64,
    pub components: Vec<VectorField>,
}

impl VelocityField {
    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn max_component(&self) -> f64 {
        self.components
            .iter()
            .flat_map(|c| c.x.iter().chain(c.y.iter()))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.components
            .iter()
            .all(|c| c.x.iter().chain(c.y.iter()).all(|v| v.is_finite()))
    }
}

fn check_counts(state: &PopulationField, counts: &[usize]) -> Result<()> {
    if counts.iter().any(|&c| c != state.n()) {
        return Err(Error::config(format!(
            "population count mismatch: state has {}, inputs have {counts:?}",
            state.n()
        )));
    }
    Ok(())
}

/// `Σ_j ρ^j ∗ η^j`, undershoots below zero clamped to zero.
pub fn felt_density(
    state: &PopulationField,
    kernels: &[Arc<SampledKernel>],
) -> Result<Array2<f64>> {
    check_counts(state, &[kernels.len()])?;
    let mut total = state.grid().zeros();
    for (rho, k) in state.populations().iter().zip(kernels) {
        total += &convolve(rho, k)?;
    }
    let worst = total.iter().fold(0.0_f64, |m, &v| m.min(v));
    if worst < -1e-10 {
        warn!("convolved density undershoots to {worst:e}; clamping speed-law argument at 0");
    }
    total.mapv_inplace(|v| v.max(0.0));
    Ok(total)
}

/// `V^i = v^i(Σ_j ρ^j ∗ η^j) · v⃗^i`
pub fn assemble_differentiable(
    state: &PopulationField,
    laws: &[SpeedLaw],
    dirs: &[DirectionField],
    kernels: &[Arc<SampledKernel>],
) -> Result<VelocityField> {
    check_counts(state, &[laws.len(), dirs.len(), kernels.len()])?;
    let felt = felt_density(state, kernels)?;
    let components = laws
        .iter()
        .zip(dirs)
        .map(|(law, dir)| dir.total.weighted(&felt.mapv(|c| law.v(c))))
        .collect();
    Ok(VelocityField { t: 0.0, components })
}

/// Transport directions `v⃗^i + I^i(ρ)` of the deviation family.
pub fn transport_deviation(
    state: &PopulationField,
    dirs: &[DirectionField],
    ops: &[NonlocalOp],
) -> Result<VelocityField> {
    check_counts(state, &[dirs.len(), ops.len()])?;
    let mut components = Vec::with_capacity(ops.len());
    for (dir, op) in dirs.iter().zip(ops) {
        let mut w = op.evaluate(state)?;
        w.add_assign_scaled(1.0, &dir.total);
        components.push(w);
    }
    Ok(VelocityField { t: 0.0, components })
}

/// `V^i = v^i(ρ^i) · (v⃗^i + I^i(ρ))`
pub fn assemble_deviation(
    state: &PopulationField,
    laws: &[SpeedLaw],
    dirs: &[DirectionField],
    ops: &[NonlocalOp],
) -> Result<VelocityField> {
    check_counts(state, &[laws.len()])?;
    let mut field = transport_deviation(state, dirs, ops)?;
    for ((w, law), rho) in field
        .components
        .iter_mut()
        .zip(laws)
        .zip(state.populations())
    {
        let speed = rho.mapv(|r| law.v(r));
        Zip::from(&mut w.x).and(&speed).for_each(|a, &s| *a *= s);
        Zip::from(&mut w.y).and(&speed).for_each(|a, &s| *a *= s);
    }
    Ok(field)
}
