//! Linearized semigroup of the differentiable model, directional
//! derivative checks and cost functionals.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis, Zip};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, PopulationField, VectorField};
use crate::kernel::convolve;
use crate::solver::{
    lane_exit_flags, lf_update, run_recorded, run_with_dts, sweep, Family, ModelSpec, Trajectory,
};

fn require_differentiable(model: &ModelSpec) -> Result<()> {
    if model.family != Family::Differentiable {
        return Err(Error::UnsupportedModel("differentiable"));
    }
    Ok(())
}

fn kernel_sum(state: &PopulationField, model: &ModelSpec) -> Result<Array2<f64>> {
    let mut total = state.grid().zeros();
    for (rho, k) in state.populations().iter().zip(&model.kernels) {
        total += &convolve(rho, k)?;
    }
    Ok(total)
}

/// Directional derivative `DV^i(ρ)(σ) = v^i′(ρ⋆η)(σ⋆η) v⃗^i`, zero where the
/// speed-law argument is clamped.
fn velocity_derivative(
    rho: &PopulationField,
    sigma: &PopulationField,
    model: &ModelSpec,
) -> Result<Vec<VectorField>> {
    let raw = kernel_sum(rho, model)?;
    let s = kernel_sum(sigma, model)?;
    Ok(model
        .laws
        .iter()
        .zip(&model.dirs)
        .map(|(law, dir)| {
            let mut w = raw.clone();
            Zip::from(&mut w).and(&s).for_each(|c, &sv| {
                *c = if *c >= 0.0 { law.dv(*c) * sv } else { 0.0 };
            });
            dir.total.weighted(&w)
        })
        .collect())
}

/// Perturbation flux `(ρ^i v′(ρ⋆η)(σ⋆η) + σ^i v(ρ⋆η)) v⃗^i` per population.
pub fn linearized_velocity(
    rho: &PopulationField,
    sigma: &PopulationField,
    model: &ModelSpec,
) -> Result<Vec<VectorField>> {
    require_differentiable(model)?;
    if !rho.same_layout(sigma) {
        return Err(Error::config("density and perturbation layouts differ"));
    }
    let v = model.velocity(rho)?;
    let dv = velocity_derivative(rho, sigma, model)?;
    Ok(v.components
        .iter()
        .zip(&dv)
        .enumerate()
        .map(|(i, (vi, dvi))| {
            let mut g = vi.weighted(sigma.population(i));
            g.add_assign_scaled(1.0, &dvi.weighted(rho.population(i)));
            g
        })
        .collect())
}

/// Derivative of one LxF sweep: flux `σ w + ρ dw`, exits open where the
/// base state flows out.
fn linear_sweep(
    grid: &GridSpec,
    base: &Array2<f64>,
    sigma: &mut Array2<f64>,
    w: &Array2<f64>,
    dw: &Array2<f64>,
    axis: Axis,
    dt: f64,
) {
    let h = if axis == Axis(0) { grid.dx } else { grid.dy };
    let lambda = dt / h;
    Zip::indexed(sigma.lanes_mut(axis))
        .and(base.lanes(axis))
        .and(w.lanes(axis))
        .and(dw.lanes(axis))
        .par_for_each(
            |lane,
             mut s: ArrayViewMut1<f64>,
             r: ArrayView1<f64>,
             w: ArrayView1<f64>,
             dw: ArrayView1<f64>| {
                let (lo_exit, hi_exit) = lane_exit_flags(grid, axis, lane);
                let n = s.len();
                let mut u: Vec<f64> = s.iter().copied().collect();
                let g: Vec<f64> = (0..n).map(|k| u[k] * w[k] + r[k] * dw[k]).collect();
                let lo = if lo_exit && r[0] * w[0] < 0.0 {
                    g[0]
                } else {
                    0.0
                };
                let hi = if hi_exit && r[n - 1] * w[n - 1] > 0.0 {
                    g[n - 1]
                } else {
                    0.0
                };
                lf_update(&mut u, &g, lambda, lo, hi);
                s.iter_mut().zip(&u).for_each(|(a, b)| *a = *b);
            },
        );
}

/// `σ(t)` from `σ₀` along the recorded trajectory.
pub fn solve_linearized(
    traj: &Trajectory,
    sigma0: &PopulationField,
    t: f64,
) -> Result<PopulationField> {
    let model = &traj.model;
    require_differentiable(model)?;
    let steps = traj.steps_to(t)?;
    if !sigma0.same_layout(&traj.states[0]) {
        return Err(Error::config("perturbation layout differs from trajectory"));
    }
    let grid = model.grid.clone();
    let mut sigma = sigma0.clone();
    for k in 0..steps {
        let base = &traj.states[k];
        let dt = traj.dts[k];
        let v = model.transport(base)?;
        let dv = velocity_derivative(base, &sigma, model)?;
        let mut data = sigma.populations().to_vec();
        for (i, s) in data.iter_mut().enumerate() {
            let mut rho = base.population(i).clone();
            for &(axis, frac) in model.splitting.sweeps() {
                let (wc, dwc) = if axis == Axis(0) {
                    (&v.components[i].x, &dv[i].x)
                } else {
                    (&v.components[i].y, &dv[i].y)
                };
                linear_sweep(&grid, &rho, s, wc, dwc, axis, frac * dt);
                sweep(model, i, &mut rho, wc, axis, frac * dt);
            }
        }
        sigma = PopulationField::new(grid.clone(), data)?;
        sigma.check_finite()?;
    }
    Ok(sigma)
}

/// Base trajectory and linearized solution reused across a sweep of `h`.
#[derive(Clone, Debug)]
pub struct GateauxProbe {
    pub traj: Trajectory,
    pub sigma0: PopulationField,
    pub sigma_t: PopulationField,
    pub t: f64,
}

impl GateauxProbe {
    pub fn new(
        model: &ModelSpec,
        rho0: &PopulationField,
        sigma0: &PopulationField,
        t: f64,
    ) -> Result<Self> {
        require_differentiable(model)?;
        let mut m = model.clone().with_t_max(t);
        m.snapshots.clear();
        let out = run_recorded(&m, rho0, &mut ())?;
        let traj = out.trajectory.expect("recorded run");
        let sigma_t = solve_linearized(&traj, sigma0, t)?;
        Ok(GateauxProbe {
            traj,
            sigma0: sigma0.clone(),
            sigma_t,
            t,
        })
    }

    pub fn base_final(&self) -> &PopulationField {
        self.traj.states.last().expect("non-empty")
    }

    /// `S_t(ρ₀ + hσ₀)` on the base step sequence.
    pub fn perturbed_final(&self, h: f64) -> Result<PopulationField> {
        let datum = self.traj.states[0].add_scaled(h, &self.sigma0);
        run_with_dts(&self.traj.model, &datum, &self.traj.dts)
    }

    /// `‖S_t(ρ₀ + hσ₀) − S_t ρ₀ − h Σ_t σ₀‖_L1`
    pub fn residual(&self, h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::config("h must be positive"));
        }
        let pert = self.perturbed_final(h)?;
        let expected = self.base_final().add_scaled(h, &self.sigma_t);
        Ok(pert.l1_distance(&expected))
    }
}

pub fn gateaux_residual(
    model: &ModelSpec,
    rho0: &PopulationField,
    sigma0: &PopulationField,
    t: f64,
    h: f64,
) -> Result<f64> {
    GateauxProbe::new(model, rho0, sigma0, t)?.residual(h)
}

type CostFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type CostGrad = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// `J = ∫ f(ρ(t)) ψ`, with `f′` supplied alongside `f`.
#[derive(Clone)]
pub struct CostSpec {
    pub f: Arc<CostFn>,
    pub df: Arc<CostGrad>,
    pub psi: Array2<f64>,
    pub t: f64,
}

impl fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostSpec")
            .field("t", &self.t)
            .finish_non_exhaustive()
    }
}

impl CostSpec {
    /// `f(ρ) = Σ_i ρ^i`
    pub fn total_density(psi: Array2<f64>, t: f64) -> Self {
        CostSpec {
            f: Arc::new(|r: &[f64]| r.iter().sum()),
            df: Arc::new(|_: &[f64], out: &mut [f64]| out.fill(1.0)),
            psi,
            t,
        }
    }

    pub fn value(&self, state: &PopulationField) -> Result<f64> {
        let g = state.grid();
        if self.psi.dim() != g.shape() {
            return Err(Error::Dimension {
                expected: g.shape(),
                found: self.psi.dim(),
            });
        }
        let mut rho = vec![0.0; state.n()];
        let mut acc = 0.0;
        for ((i, j), &w) in self.psi.indexed_iter() {
            for (k, r) in rho.iter_mut().enumerate() {
                *r = state.population(k)[[i, j]];
            }
            acc += (self.f)(&rho) * w;
        }
        Ok(acc * g.cell_area())
    }

    /// `∫ f′(ρ)·σ ψ`
    pub fn derivative(&self, state: &PopulationField, sigma: &PopulationField) -> Result<f64> {
        let g = state.grid();
        let n = state.n();
        let (mut rho, mut d) = (vec![0.0; n], vec![0.0; n]);
        let mut acc = 0.0;
        for ((i, j), &w) in self.psi.indexed_iter() {
            for (k, r) in rho.iter_mut().enumerate() {
                *r = state.population(k)[[i, j]];
            }
            (self.df)(&rho, &mut d);
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "cost derivative not finite at cell ({i}, {j})"
                )));
            }
            acc += w * d
                .iter()
                .enumerate()
                .map(|(k, dk)| dk * sigma.population(k)[[i, j]])
                .sum::<f64>();
        }
        Ok(acc * g.cell_area())
    }
}

/// `(J, DJ(σ₀))` at the cost time.
pub fn cost_and_gradient(
    traj: &Trajectory,
    cost: &CostSpec,
    sigma0: &PopulationField,
) -> Result<(f64, f64)> {
    let state = traj.state_at(cost.t)?;
    let sigma = solve_linearized(traj, sigma0, cost.t)?;
    Ok((cost.value(state)?, cost.derivative(state, &sigma)?))
}
