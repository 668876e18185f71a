//! Lax-Friedrichs time stepping with dimensional splitting.

use std::sync::Arc;

use log::{debug, warn};
use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis, Zip};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, PopulationField, Side};
use crate::kernel::SampledKernel;
use crate::nonlocal::NonlocalOp;
use crate::velocity::{
    assemble_deviation, assemble_differentiable, transport_deviation, DirectionField, SpeedLaw,
    VelocityField,
};

/// Tolerance of the maximum principle check.
pub const INVARIANT_TOL: f64 = 1e-6;
const MIN_DT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// `V^i = v^i(Σ ρ^j ∗ η^j) v⃗^i`, flux `ρ V`.
    Differentiable,
    /// `V^i = v^i(ρ^i)(v⃗^i + I^i(ρ))`, flux `q(ρ)(v⃗ + I)`.
    Deviation,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Differentiable => "differentiable",
            Family::Deviation => "deviation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Splitting {
    /// x-sweep then y-sweep.
    #[default]
    Godunov,
    /// half x, full y, half x.
    Strang,
}

impl Splitting {
    pub(crate) fn sweeps(self) -> &'static [(Axis, f64)] {
        match self {
            Splitting::Godunov => &[(Axis(0), 1.0), (Axis(1), 1.0)],
            Splitting::Strang => &[(Axis(0), 0.5), (Axis(1), 1.0), (Axis(0), 0.5)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub grid: Arc<GridSpec>,
    pub family: Family,
    pub laws: Vec<SpeedLaw>,
    pub dirs: Vec<DirectionField>,
    /// One kernel per population (differentiable family).
    pub kernels: Vec<Arc<SampledKernel>>,
    /// One operator per population (deviation family).
    pub ops: Vec<NonlocalOp>,
    pub r_max: f64,
    pub cfl: f64,
    pub t_max: f64,
    pub snapshots: Vec<f64>,
    pub splitting: Splitting,
    pub strict: bool,
}

impl ModelSpec {
    pub fn differentiable(
        grid: Arc<GridSpec>,
        laws: Vec<SpeedLaw>,
        dirs: Vec<DirectionField>,
        kernels: Vec<Arc<SampledKernel>>,
    ) -> Self {
        let r_max = laws.iter().map(|l| l.r_max).fold(0.0, f64::max);
        ModelSpec {
            grid,
            family: Family::Differentiable,
            laws,
            dirs,
            kernels,
            ops: Vec::new(),
            r_max,
            cfl: 0.9,
            t_max: 1.0,
            snapshots: Vec::new(),
            splitting: Splitting::Godunov,
            strict: false,
        }
    }

    pub fn deviation(
        grid: Arc<GridSpec>,
        laws: Vec<SpeedLaw>,
        dirs: Vec<DirectionField>,
        ops: Vec<NonlocalOp>,
    ) -> Self {
        let r_max = laws.iter().map(|l| l.r_max).fold(0.0, f64::max);
        ModelSpec {
            grid,
            family: Family::Deviation,
            laws,
            dirs,
            kernels: Vec::new(),
            ops,
            r_max,
            cfl: 0.9,
            t_max: 1.0,
            snapshots: Vec::new(),
            splitting: Splitting::Godunov,
            strict: false,
        }
    }

    pub fn n(&self) -> usize {
        self.laws.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::config("model needs at least one population"));
        }
        if self.dirs.len() != n {
            return Err(Error::config(format!(
                "{} direction fields for {n} populations",
                self.dirs.len()
            )));
        }
        for d in &self.dirs {
            if d.dim() != self.grid.shape() {
                return Err(Error::Dimension {
                    expected: self.grid.shape(),
                    found: d.dim(),
                });
            }
        }
        match self.family {
            Family::Differentiable => {
                if self.kernels.len() != n {
                    return Err(Error::config(format!(
                        "{} kernels for {n} populations",
                        self.kernels.len()
                    )));
                }
                for k in &self.kernels {
                    if k.shape() != self.grid.shape() {
                        return Err(Error::Dimension {
                            expected: self.grid.shape(),
                            found: k.shape(),
                        });
                    }
                }
            }
            Family::Deviation => {
                if self.ops.len() != n {
                    return Err(Error::config(format!(
                        "{} operators for {n} populations",
                        self.ops.len()
                    )));
                }
                for op in &self.ops {
                    op.validate(n)?;
                }
                for (i, law) in self.laws.iter().enumerate() {
                    if !law.vanishes_at_max_density() {
                        return Err(Error::config(format!(
                            "population {i}: deviation family needs v(R) = 0, got {}",
                            law.v(law.r_max)
                        )));
                    }
                }
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::config(format!(
                "cfl must lie in (0, 1], got {}",
                self.cfl
            )));
        }
        if !(self.t_max >= 0.0) || !self.t_max.is_finite() {
            return Err(Error::config(format!(
                "t_max must be finite and >= 0, got {}",
                self.t_max
            )));
        }
        if let Some(&t) = self
            .snapshots
            .iter()
            .find(|&&t| !(0.0..=self.t_max).contains(&t))
        {
            return Err(Error::config(format!(
                "snapshot time {t} outside [0, {}]",
                self.t_max
            )));
        }
        Ok(())
    }

    /// Physical velocity `V^i` for the current state.
    pub fn velocity(&self, state: &PopulationField) -> Result<VelocityField> {
        match self.family {
            Family::Differentiable => {
                assemble_differentiable(state, &self.laws, &self.dirs, &self.kernels)
            }
            Family::Deviation => assemble_deviation(state, &self.laws, &self.dirs, &self.ops),
        }
    }

    /// Field frozen over one step: `V` for the differentiable family,
    /// `v⃗ + I` for the deviation family.
    pub fn transport(&self, state: &PopulationField) -> Result<VelocityField> {
        match self.family {
            Family::Differentiable => self.velocity(state),
            Family::Deviation => transport_deviation(state, &self.dirs, &self.ops),
        }
    }

    /// Density factor of the flux: `q(ρ)` or `ρ`.
    #[inline]
    fn flux_factor(&self, i: usize, rho: f64) -> f64 {
        match self.family {
            Family::Differentiable => rho,
            Family::Deviation => self.laws[i].q(rho),
        }
    }

    /// Lipschitz constant of the flux factor.
    pub fn flux_lipschitz(&self, i: usize) -> f64 {
        match self.family {
            Family::Differentiable => 1.0,
            Family::Deviation => self.laws[i].norms().dq,
        }
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_snapshots(mut self, snapshots: Vec<f64>) -> Self {
        self.snapshots = snapshots;
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }
}

/// Per-step diagnostics. `t` is the time reached by the step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub mass: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Mass leaving through exits during this step.
    pub outflow: Vec<f64>,
}

/// CFL time step `cfl · min(dx, dy) / max_i(‖g_i′‖ · max|W_i|)` where
/// `g_i` is the flux factor, capped at `cap` and floored at 1e−12.
pub fn cfl_dt(model: &ModelSpec, transport: &VelocityField, cfl: f64, cap: f64) -> Result<f64> {
    if !transport.is_finite() {
        return Err(Error::Numeric("non-finite velocity".into()));
    }
    let g = &model.grid;
    let mut speed = 0.0_f64;
    for (i, w) in transport.components.iter().enumerate() {
        let wmax =
            w.x.iter()
                .chain(w.y.iter())
                .fold(0.0_f64, |m, v| m.max(v.abs()));
        speed = speed.max(model.flux_lipschitz(i) * wmax);
    }
    let dt = if speed > 0.0 {
        cfl * g.dx.min(g.dy) / speed
    } else {
        f64::INFINITY
    };
    Ok(dt.max(MIN_DT).min(cap))
}

pub(crate) fn lane_exit_flags(grid: &GridSpec, axis: Axis, lane: usize) -> (bool, bool) {
    if axis == Axis(0) {
        (
            grid.is_exit(Side::West, lane),
            grid.is_exit(Side::East, lane),
        )
    } else {
        (
            grid.is_exit(Side::South, lane),
            grid.is_exit(Side::North, lane),
        )
    }
}

/// Conservative LxF update of one lane given cell fluxes and boundary face
/// fluxes (positive along the axis).
pub(crate) fn lf_update(u: &mut [f64], f: &[f64], lambda: f64, lo: f64, hi: f64) {
    let n = u.len();
    let mu = 0.5 / lambda;
    let mut left = lo;
    let mut old = u[0];
    for k in 0..n {
        let (right, next_old) = if k + 1 < n {
            (0.5 * (f[k] + f[k + 1]) - mu * (u[k + 1] - old), u[k + 1])
        } else {
            (hi, 0.0)
        };
        u[k] = old - lambda * (right - left);
        left = right;
        old = next_old;
    }
}

/// Exit faces let mass leave only: zero-gradient ghost gives face flux
/// `f` at the boundary cell, clamped to the outward direction.
#[inline]
fn exit_flux_lo(exit: bool, f0: f64) -> f64 {
    if exit {
        f0.min(0.0)
    } else {
        0.0
    }
}

#[inline]
fn exit_flux_hi(exit: bool, fn1: f64) -> f64 {
    if exit {
        fn1.max(0.0)
    } else {
        0.0
    }
}

/// One directional sweep of population `i`; returns the escaped mass.
pub(crate) fn sweep(
    model: &ModelSpec,
    i: usize,
    rho: &mut Array2<f64>,
    w: &Array2<f64>,
    axis: Axis,
    dt: f64,
) -> f64 {
    let grid = &model.grid;
    let (h, transverse) = if axis == Axis(0) {
        (grid.dx, grid.dy)
    } else {
        (grid.dy, grid.dx)
    };
    let lambda = dt / h;
    let out: Array1<f64> = Zip::indexed(rho.lanes_mut(axis))
        .and(w.lanes(axis))
        .par_map_collect(|lane, mut r: ArrayViewMut1<f64>, w: ArrayView1<f64>| {
            let (lo_exit, hi_exit) = lane_exit_flags(grid, axis, lane);
            let mut u: Vec<f64> = r.iter().copied().collect();
            let f: Vec<f64> = u
                .iter()
                .zip(w.iter())
                .map(|(&p, &c)| model.flux_factor(i, p) * c)
                .collect();
            let n = u.len();
            let lo = exit_flux_lo(lo_exit, f[0]);
            let hi = exit_flux_hi(hi_exit, f[n - 1]);
            lf_update(&mut u, &f, lambda, lo, hi);
            r.iter_mut().zip(&u).for_each(|(a, b)| *a = *b);
            (hi - lo) * dt * transverse
        });
    out.iter().sum()
}

/// Advances every population by `dt` with the transport frozen at the
/// pre-step state. Returns the new state and the escaped mass per
/// population.
pub fn split_step(
    state: &PopulationField,
    model: &ModelSpec,
    dt: f64,
) -> Result<(PopulationField, Vec<f64>)> {
    let transport = model.transport(state)?;
    split_step_frozen(state, model, &transport, dt)
}

pub fn split_step_frozen(
    state: &PopulationField,
    model: &ModelSpec,
    transport: &VelocityField,
    dt: f64,
) -> Result<(PopulationField, Vec<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::Numeric(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let mut data = state.populations().to_vec();
    let mut escaped = vec![0.0; data.len()];
    for (i, rho) in data.iter_mut().enumerate() {
        let w = &transport.components[i];
        for &(axis, frac) in model.splitting.sweeps() {
            let comp = if axis == Axis(0) { &w.x } else { &w.y };
            escaped[i] += sweep(model, i, rho, comp, axis, frac * dt);
        }
    }
    let next = PopulationField::new(state.grid_arc().clone(), data)?;
    next.check_finite()?;
    Ok((next, escaped))
}

/// Boundary treatment as a ghost layer: exit ghosts copy the adjacent cell,
/// every other ghost is zero. Returns the padded arrays, shape
/// `(nx + 2, ny + 2)`. The sweeps use the equivalent face fluxes directly.
pub fn apply_boundary(state: &PopulationField, grid: &GridSpec) -> Vec<Array2<f64>> {
    let (nx, ny) = grid.shape();
    state
        .populations()
        .iter()
        .map(|rho| {
            let mut p = Array2::zeros((nx + 2, ny + 2));
            p.slice_mut(ndarray::s![1..nx + 1, 1..ny + 1]).assign(rho);
            for j in 0..ny {
                if grid.is_exit(Side::West, j) {
                    p[[0, j + 1]] = rho[[0, j]];
                }
                if grid.is_exit(Side::East, j) {
                    p[[nx + 1, j + 1]] = rho[[nx - 1, j]];
                }
            }
            for i in 0..nx {
                if grid.is_exit(Side::South, i) {
                    p[[i + 1, 0]] = rho[[i, 0]];
                }
                if grid.is_exit(Side::North, i) {
                    p[[i + 1, ny + 1]] = rho[[i, ny - 1]];
                }
            }
            p
        })
        .collect()
}

/// Callbacks invoked during [`run`].
pub trait Observer {
    /// After each step, with the post-step state and the transport field
    /// used for the step.
    fn on_step(
        &mut self,
        _report: &StepReport,
        _state: &PopulationField,
        _transport: &VelocityField,
    ) -> Result<()> {
        Ok(())
    }

    fn on_snapshot(&mut self, _t: f64, _state: &PopulationField) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

/// Pre-step states and step sizes of a run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub model: ModelSpec,
    /// `states[k]` at `times[k]`; the last entry is the final state.
    pub states: Vec<PopulationField>,
    pub times: Vec<f64>,
    pub dts: Vec<f64>,
}

impl Trajectory {
    pub fn end(&self) -> f64 {
        *self.times.last().expect("trajectory holds the datum")
    }

    /// Number of steps needed to reach `t`, which must be a step time.
    pub fn steps_to(&self, t: f64) -> Result<usize> {
        let end = self.end();
        if t < 0.0 || t > end * (1.0 + 1e-12) + 1e-14 {
            return Err(Error::Range { requested: t, end });
        }
        let k = self
            .times
            .partition_point(|&s| s < t - 1e-12 * (1.0 + t.abs()));
        if k >= self.times.len() || (self.times[k] - t).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(Error::Range { requested: t, end });
        }
        Ok(k)
    }

    pub fn state_at(&self, t: f64) -> Result<&PopulationField> {
        Ok(&self.states[self.steps_to(t)?])
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub state: PopulationField,
    pub reports: Vec<StepReport>,
    pub escaped: Vec<f64>,
    pub trajectory: Option<Trajectory>,
}

impl RunOutput {
    pub fn t(&self) -> f64 {
        self.reports.last().map_or(0.0, |r| r.t)
    }
}

fn check_datum(model: &ModelSpec, datum: &PopulationField) -> Result<()> {
    if datum.grid() != model.grid.as_ref() {
        return Err(Error::config("datum grid differs from model grid"));
    }
    if datum.n() != model.n() {
        return Err(Error::config(format!(
            "datum has {} populations, model {}",
            datum.n(),
            model.n()
        )));
    }
    datum.check_finite()?;
    if model.family == Family::Deviation {
        for i in 0..datum.n() {
            let (lo, hi) = datum.min_max(i);
            if lo < -1e-12 || hi > model.r_max + 1e-12 {
                return Err(Error::config(format!(
                    "population {i} datum range [{lo}, {hi}] leaves [0, {}]",
                    model.r_max
                )));
            }
        }
    }
    Ok(())
}

/// Range check after a step. Returns the first violation.
fn invariant_violation(model: &ModelSpec, report: &StepReport) -> Option<Error> {
    for i in 0..report.min.len() {
        let (lo, hi) = (report.min[i], report.max[i]);
        let upper = match model.family {
            Family::Deviation => model.r_max + INVARIANT_TOL,
            Family::Differentiable => f64::INFINITY,
        };
        if lo < -INVARIANT_TOL || hi > upper {
            return Some(Error::InvariantViolation {
                population: i,
                t: report.t,
                min: lo,
                max: hi,
                bound: model.r_max,
            });
        }
    }
    None
}

/// Simulates up to `model.t_max`, hitting every snapshot time exactly.
pub fn run(
    model: &ModelSpec,
    datum: &PopulationField,
    observer: &mut dyn Observer,
) -> Result<RunOutput> {
    run_inner(model, datum, observer, false)
}

/// As [`run`], also storing every pre-step state and step size.
pub fn run_recorded(
    model: &ModelSpec,
    datum: &PopulationField,
    observer: &mut dyn Observer,
) -> Result<RunOutput> {
    run_inner(model, datum, observer, true)
}

fn run_inner(
    model: &ModelSpec,
    datum: &PopulationField,
    observer: &mut dyn Observer,
    record: bool,
) -> Result<RunOutput> {
    model.validate()?;
    check_datum(model, datum)?;
    let mut stops: Vec<f64> = model.snapshots.clone();
    stops.push(model.t_max);
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut state = datum.clone();
    let mut t = 0.0;
    let mut reports = Vec::new();
    let mut escaped = vec![0.0; model.n()];
    let mut traj = record.then(|| Trajectory {
        model: model.clone(),
        states: vec![datum.clone()],
        times: vec![0.0],
        dts: Vec::new(),
    });
    let mut warned = false;
    let mut next_stop = 0;
    while next_stop < stops.len() && stops[next_stop] <= 0.0 {
        if model.snapshots.contains(&stops[next_stop]) {
            observer.on_snapshot(0.0, &state)?;
        }
        next_stop += 1;
    }
    while next_stop < stops.len() {
        let target = stops[next_stop];
        let transport = model.transport(&state)?;
        let mut dt = cfl_dt(model, &transport, model.cfl, target - t)?;
        let reached = dt >= target - t;
        if reached {
            dt = target - t;
        }
        let (next, out) = split_step_frozen(&state, model, &transport, dt)?;
        state = next;
        t = if reached { target } else { t + dt };
        for (e, o) in escaped.iter_mut().zip(&out) {
            *e += o;
        }
        let (min, max): (Vec<f64>, Vec<f64>) = (0..state.n()).map(|i| state.min_max(i)).unzip();
        let report = StepReport {
            step: reports.len() + 1,
            t,
            dt,
            mass: (0..state.n()).map(|i| state.mass(i)).collect(),
            min,
            max,
            outflow: out,
        };
        if let Some(err) = invariant_violation(model, &report) {
            if model.strict {
                return Err(err);
            }
            if !warned {
                warn!("{err}");
                warned = true;
            }
        }
        if let Some(tr) = traj.as_mut() {
            tr.states.push(state.clone());
            tr.times.push(t);
            tr.dts.push(dt);
        }
        observer.on_step(&report, &state, &transport)?;
        reports.push(report);
        if reached {
            if model.snapshots.contains(&target) {
                observer.on_snapshot(t, &state)?;
            }
            next_stop += 1;
        }
    }
    debug!("run finished at t = {t} after {} steps", reports.len());
    Ok(RunOutput {
        state,
        reports,
        escaped,
        trajectory: traj,
    })
}

/// Replays a prescribed step sequence without CFL control.
pub fn run_with_dts(
    model: &ModelSpec,
    datum: &PopulationField,
    dts: &[f64],
) -> Result<PopulationField> {
    model.validate()?;
    if datum.grid() != model.grid.as_ref() || datum.n() != model.n() {
        return Err(Error::config("datum does not match model"));
    }
    let mut state = datum.clone();
    for &dt in dts {
        state = split_step(&state, model, dt)?.0;
    }
    Ok(state)
}
