//! A-priori bounds and their comparison with measured quantities.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::grid::{norms, GridSpec, PopulationField, VectorField};
use crate::kernel::SampledKernel;
use crate::nonlocal::estimate_ci;
use crate::solver::{run, Family, ModelSpec, Observer, StepReport, Trajectory, INVARIANT_TOL};
use crate::velocity::{SpeedLaw, VelocityField};

fn simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `W_d = ∫_0^{π/2} cos^d θ dθ`, adaptive Simpson to 1e−12.
pub fn wd(d: u32) -> f64 {
    let f = |x: f64| x.cos().powi(d as i32);
    let (a, b) = (0.0, FRAC_PI_2);
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, 1e-13, 50)
}

/// Norms entering the bounds for one population (or the aggregate).
/// Vector and matrix norms are entrywise 1-norms; `W^{k,p}` norms are sums
/// of the norms of the derivatives up to order `k`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundInputs {
    pub d: u32,
    /// `‖ρ₀‖_L1` of the whole datum (`N₁`).
    pub n1: f64,
    pub rho_inf: f64,
    pub tv0: f64,
    pub v_inf: f64,
    pub dv_inf: f64,
    pub d2v_inf: f64,
    pub q_inf: f64,
    pub dq_inf: f64,
    pub dir_inf: f64,
    pub dir_l1: f64,
    pub dir_grad_inf: f64,
    pub dir_grad_l1: f64,
    pub dir_hess_l1: f64,
    pub div_dir_inf: f64,
    pub div_dir_l1: f64,
    pub grad_div_dir_l1: f64,
    pub eta_inf: f64,
    pub grad_eta_inf: f64,
    pub hess_eta_inf: f64,
    /// Empirical lower bound of the operator constant.
    pub c_i: f64,
    /// Measured `sup |∇V|` over the run so far.
    pub grad_v_inf: f64,
}

impl BoundInputs {
    pub fn v_w1inf(&self) -> f64 {
        self.v_inf + self.dv_inf
    }

    pub fn v_w2inf(&self) -> f64 {
        self.v_w1inf() + self.d2v_inf
    }

    pub fn dir_w1inf(&self) -> f64 {
        self.dir_inf + self.dir_grad_inf
    }

    pub fn dir_w11(&self) -> f64 {
        self.dir_l1 + self.dir_grad_l1
    }

    pub fn dir_w21(&self) -> f64 {
        self.dir_w11() + self.dir_hess_l1
    }

    pub fn grad_eta_w1inf(&self) -> f64 {
        self.grad_eta_inf + self.hess_eta_inf
    }

    pub fn c_d(&self) -> f64 {
        self.d as f64 * wd(self.d)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.n1,
            self.rho_inf,
            self.tv0,
            self.v_inf,
            self.dv_inf,
            self.d2v_inf,
            self.q_inf,
            self.dq_inf,
            self.dir_inf,
            self.dir_l1,
            self.dir_grad_inf,
            self.dir_grad_l1,
            self.dir_hess_l1,
            self.div_dir_inf,
            self.div_dir_l1,
            self.grad_div_dir_l1,
            self.eta_inf,
            self.grad_eta_inf,
            self.hess_eta_inf,
            self.c_i,
            self.grad_v_inf,
        ];
        if self.d == 0 || all.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config(
                "bound inputs need d >= 1 and non-negative norms",
            ));
        }
        Ok(())
    }

    /// Combines per-population inputs: data norms and `C_I` add up
    /// (1-norm over populations), coefficient norms take the maximum.
    pub fn aggregate(parts: &[BoundInputs]) -> BoundInputs {
        let sum = |f: fn(&BoundInputs) -> f64| parts.iter().map(f).sum::<f64>();
        let max = |f: fn(&BoundInputs) -> f64| parts.iter().map(f).fold(0.0, f64::max);
        BoundInputs {
            d: parts.iter().map(|p| p.d).max().unwrap_or(2),
            n1: max(|p| p.n1),
            rho_inf: sum(|p| p.rho_inf),
            tv0: sum(|p| p.tv0),
            v_inf: max(|p| p.v_inf),
            dv_inf: max(|p| p.dv_inf),
            d2v_inf: max(|p| p.d2v_inf),
            q_inf: max(|p| p.q_inf),
            dq_inf: max(|p| p.dq_inf),
            dir_inf: max(|p| p.dir_inf),
            dir_l1: max(|p| p.dir_l1),
            dir_grad_inf: max(|p| p.dir_grad_inf),
            dir_grad_l1: max(|p| p.dir_grad_l1),
            dir_hess_l1: max(|p| p.dir_hess_l1),
            div_dir_inf: max(|p| p.div_dir_inf),
            div_dir_l1: max(|p| p.div_dir_l1),
            grad_div_dir_l1: max(|p| p.grad_div_dir_l1),
            eta_inf: max(|p| p.eta_inf),
            grad_eta_inf: max(|p| p.grad_eta_inf),
            hess_eta_inf: max(|p| p.hess_eta_inf),
            c_i: sum(|p| p.c_i),
            grad_v_inf: max(|p| p.grad_v_inf),
        }
    }
}

/// Grid norms of a direction field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionNorms {
    pub sup: f64,
    pub l1: f64,
    pub grad_sup: f64,
    pub grad_l1: f64,
    pub hess_l1: f64,
    pub div_sup: f64,
    pub div_l1: f64,
    pub grad_div_l1: f64,
}

pub fn direction_norms(grid: &GridSpec, u: &VectorField) -> DirectionNorms {
    let div = grid.divergence(u);
    DirectionNorms {
        sup: grid.vector_sup(u),
        l1: grid.vector_l1(u),
        grad_sup: grid.jacobian_sup(u),
        grad_l1: grid.jacobian_l1(u),
        hess_l1: grid.hessian_l1(u),
        div_sup: grid.linf(&div),
        div_l1: grid.l1(&div),
        grad_div_l1: grid.grad_div_l1(u),
    }
}

/// Continuum sup norms of a sampled kernel (normalization included).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelNorms {
    pub sup: f64,
    pub grad_sup: f64,
    pub hess_sup: f64,
}

pub fn kernel_norms(k: &SampledKernel) -> KernelNorms {
    const SCAN: usize = 400;
    let (sx, sy) = k.factor_scales();
    let (px, py) = (&k.spec.x, &k.spec.y);
    let (hx, hy) = (px.half_width(), py.half_width());
    let node = |h: f64, m: usize| -h + 2.0 * h * m as f64 / SCAN as f64;
    let xs: Vec<[f64; 3]> = (0..=SCAN)
        .map(|m| {
            let x = node(hx, m);
            [
                sx * px.value(x),
                sx * px.derivative(x),
                sx * px.second_derivative(x),
            ]
        })
        .collect();
    let ys: Vec<[f64; 3]> = (0..=SCAN)
        .map(|m| {
            let y = node(hy, m);
            [
                sy * py.value(y),
                sy * py.derivative(y),
                sy * py.second_derivative(y),
            ]
        })
        .collect();
    let mut out = KernelNorms {
        sup: 0.0,
        grad_sup: 0.0,
        hess_sup: 0.0,
    };
    for a in &xs {
        for b in &ys {
            out.sup = out.sup.max((a[0] * b[0]).abs());
            out.grad_sup = out.grad_sup.max((a[1] * b[0]).abs() + (a[0] * b[1]).abs());
            out.hess_sup = out
                .hess_sup
                .max((a[2] * b[0]).abs() + 2.0 * (a[1] * b[1]).abs() + (a[0] * b[2]).abs());
        }
    }
    out
}

/// Inputs for population `i` of `model` started from `datum`.
pub fn gather_inputs(
    model: &ModelSpec,
    datum: &PopulationField,
    i: usize,
    c_i: f64,
    grad_v_inf: f64,
) -> Result<BoundInputs> {
    if i >= model.n() {
        return Err(Error::config(format!("population {i} out of range")));
    }
    let g = datum.grid();
    let rec = norms(datum)?;
    let law = &model.laws[i];
    let ln = law.norms();
    let dn = direction_norms(g, &model.dirs[i].total);
    let kn = match model.family {
        Family::Differentiable => Some(kernel_norms(&model.kernels[i])),
        Family::Deviation => None,
    };
    Ok(BoundInputs {
        d: 2,
        n1: rec.l1_total(),
        rho_inf: rec.linf[i],
        tv0: rec.tv[i],
        v_inf: ln.v,
        dv_inf: ln.dv,
        d2v_inf: ln.d2v,
        q_inf: ln.q,
        dq_inf: ln.dq,
        dir_inf: dn.sup,
        dir_l1: dn.l1,
        dir_grad_inf: dn.grad_sup,
        dir_grad_l1: dn.grad_l1,
        dir_hess_l1: dn.hess_l1,
        div_dir_inf: dn.div_sup,
        div_dir_l1: dn.div_l1,
        grad_div_dir_l1: dn.grad_div_l1,
        eta_inf: kn.map_or(0.0, |k| k.sup),
        grad_eta_inf: kn.map_or(0.0, |k| k.grad_sup),
        hess_eta_inf: kn.map_or(0.0, |k| k.hess_sup),
        c_i,
        grad_v_inf,
    })
}

/// `κ₀ = (2d + 1)‖q′‖‖∇V‖`
pub fn kappa0(inp: &BoundInputs) -> f64 {
    (2 * inp.d + 1) as f64 * inp.dq_inf * inp.grad_v_inf
}

/// `TV(ρ₀)e^{κ₀t} + d W_d e^{κ₀t} ‖q‖ (C_I + ‖div v⃗‖_∞) t`
pub fn tv_bound_deviation(t: f64, inp: &BoundInputs) -> f64 {
    let e = (kappa0(inp) * t).exp();
    inp.tv0 * e + inp.c_d() * e * inp.q_inf * (inp.c_i + inp.div_dir_inf) * t
}

pub fn k1(inp: &BoundInputs) -> f64 {
    inp.v_w1inf() * inp.dir_w1inf() * (inp.n1 * inp.grad_eta_inf + 1.0)
}

pub fn k2(inp: &BoundInputs) -> f64 {
    let n1 = inp.n1;
    let ge = inp.grad_eta_inf;
    inp.v_w1inf() * inp.dir_w11() * (n1 * n1 * ge * ge + 2.0 * n1 * inp.grad_eta_w1inf() + 1.0)
}

/// `(L∞ bound, TV bound)` for the differentiable family.
pub fn bounds_differentiable(t: f64, inp: &BoundInputs) -> (f64, f64) {
    let k1v = k1(inp);
    let d = inp.d as f64;
    let linf = inp.rho_inf * (k1v * t).exp();
    let tv = inp.tv0 * ((2.0 * d + 1.0) * k1v * t).exp()
        + t * (k1v * t).exp() * inp.c_d() * k2(inp) * inp.rho_inf;
    (linf, tv)
}

/// Non-negative quantity stored through its natural logarithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogBound {
    pub ln: f64,
}

impl LogBound {
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    pub fn dominates(self, measured: f64) -> bool {
        if measured <= 0.0 {
            return true;
        }
        self.ln >= measured.ln()
    }

    /// `log10(bound / measured)`; `+∞` when the measurement is zero.
    pub fn log10_slack(self, measured: f64) -> f64 {
        if measured <= 0.0 {
            return f64::INFINITY;
        }
        (self.ln - measured.ln()) / std::f64::consts::LN_10
    }
}

fn ln_of(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn ln_sum(terms: &[f64]) -> f64 {
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + terms.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// `ln(1 + t·G·e^{tG})` or, with `with_rate = false`, `ln(1 + t·e^{tG})`,
/// from `ln G`.
fn ln_gronwall(t: f64, ln_g: f64, with_rate: bool) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let tg = t * ln_g.exp();
    let inner = t.ln() + tg + if with_rate { ln_g } else { 0.0 };
    ln_sum(&[0.0, inner])
}

/// Norms of the parameter differences between two deviation configurations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StabilityDeltas {
    pub rho0_l1: f64,
    pub q_inf: f64,
    pub dq_inf: f64,
    pub dir_inf: f64,
    pub div_dir_l1: f64,
}

/// `(1 + t e^{t b(t)})(‖Δρ₀‖_L1 + a(t))` for the deviation family.
pub fn stability_bound_deviation(
    t: f64,
    in1: &BoundInputs,
    in2: &BoundInputs,
    del: &StabilityDeltas,
) -> LogBound {
    let ci = in1.c_i.max(in2.c_i);
    let kt = kappa0(in1).max(kappa0(in2)) * t;
    let x = in1.tv0 + t * in1.c_d() * in1.q_inf * (ci + in1.grad_div_dir_l1);
    let ln_a = ln_of(t)
        + ln_sum(&[
            kt + ln_of((ci + in2.dir_inf) * x * del.dq_inf),
            ln_of((ci + in2.div_dir_l1) * del.q_inf + in1.q_inf * del.div_dir_l1),
            kt + ln_of(in1.dq_inf * x * del.dir_inf),
        ]);
    let ln_b = ln_of(ci) + ln_sum(&[kt + ln_of(in1.dq_inf * x), ln_of(in1.q_inf)]);
    let ln = ln_gronwall(t, ln_b, false) + ln_sum(&[ln_of(del.rho0_l1), ln_a]);
    LogBound { ln }
}

/// Parameter differences for the differentiable family.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DifferentiableDeltas {
    pub rho0_l1: f64,
    pub eta_w1inf: f64,
    pub v_w1inf: f64,
    pub dir_inf: f64,
    pub dir_w11: f64,
}

/// Stability estimate of the differentiable family through the explicit
/// coefficients `α, β, γ, δ` and their primed versions.
pub fn stability_bound_differentiable(
    t: f64,
    in1: &BoundInputs,
    in2: &BoundInputs,
    del: &DifferentiableDeltas,
) -> LogBound {
    let d = in1.d as f64;
    let alpha = in1.d2v_inf * in1.eta_inf * in1.n1 * in1.grad_eta_inf * in1.dir_l1
        + in2.dv_inf * in1.grad_eta_inf * in1.dir_l1
        + in1.dv_inf * in1.eta_inf * in1.div_dir_l1;
    let beta = in1.d2v_inf * in2.n1 * in1.n1 * in1.grad_eta_inf * in1.dir_l1
        + in1.dv_inf * in2.n1 * in1.div_dir_l1
        + in2.dv_inf * in2.n1 * in1.dir_l1;
    let gamma = in1.div_dir_l1 + in1.n1 * in1.grad_eta_inf * in1.dir_l1;
    let delta = in2.dv_inf * in2.n1 * in2.grad_eta_inf + in2.v_inf;
    let alpha_p = in1.dv_inf * in1.eta_inf;
    let beta_p = in1.dv_inf * in2.n1 * in1.dir_inf;
    let gamma_p = in1.dir_inf;
    let delta_p = in2.v_inf;

    let k1v = k1(in1);
    let ln_f = (2.0 * d + 1.0) * k1v * t + ln_of(in1.tv0 + t * in1.c_d() * k2(in1) * in1.rho_inf);
    let r = in1.rho_inf.max(in2.rho_inf);
    let kt = k1(in1).max(k1(in2)) * t;
    let ln_coef = |plain: f64, primed: f64| ln_sum(&[ln_of(primed) + ln_f, ln_of(plain * r) + kt]);
    let ln_t = ln_of(t);
    let ln_s = ln_sum(&[
        ln_of(del.rho0_l1),
        ln_t + ln_coef(beta, beta_p) + ln_of(del.eta_w1inf),
        ln_t + ln_coef(gamma, gamma_p) + ln_of(del.v_w1inf),
        ln_t + ln_coef(delta, delta_p) + ln_of(del.dir_inf + del.dir_w11),
    ]);
    let ln_g = ln_coef(alpha, alpha_p);
    LogBound {
        ln: ln_s + ln_gronwall(t, ln_g, true),
    }
}

/// Range of every population at each recorded time.
#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceReport {
    pub r_max: f64,
    /// `(t, min per population, max per population)`
    pub rows: Vec<(f64, Vec<f64>, Vec<f64>)>,
    pub pass: bool,
}

impl InvarianceReport {
    fn from_rows(rows: Vec<(f64, Vec<f64>, Vec<f64>)>, r_max: f64) -> Self {
        let pass = rows.iter().all(|(_, lo, hi)| {
            lo.iter().all(|&v| v >= -INVARIANT_TOL)
                && hi.iter().all(|&v| v <= r_max + INVARIANT_TOL)
        });
        InvarianceReport { r_max, rows, pass }
    }

    pub fn from_reports(reports: &[StepReport], r_max: f64) -> Self {
        let rows = reports
            .iter()
            .map(|r| (r.t, r.min.clone(), r.max.clone()))
            .collect();
        InvarianceReport::from_rows(rows, r_max)
    }

    /// Smallest minimum and largest maximum over all rows.
    pub fn extremes(&self) -> (f64, f64) {
        self.rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, a, b)| {
                (
                    a.iter().copied().fold(lo, f64::min),
                    b.iter().copied().fold(hi, f64::max),
                )
            })
    }
}

pub fn check_invariance(traj: &Trajectory, r_max: f64) -> Result<InvarianceReport> {
    if traj.model.family != Family::Deviation {
        return Err(Error::UnsupportedModel("deviation"));
    }
    let rows = traj
        .states
        .iter()
        .zip(&traj.times)
        .map(|(s, &t)| {
            let (lo, hi) = (0..s.n()).map(|i| s.min_max(i)).unzip();
            (t, lo, hi)
        })
        .collect();
    Ok(InvarianceReport::from_rows(rows, r_max))
}

/// `sup |∇V|` over all populations of a velocity field.
pub fn velocity_gradient_sup(grid: &GridSpec, v: &VelocityField) -> f64 {
    v.components
        .iter()
        .map(|c| grid.jacobian_sup(c))
        .fold(0.0, f64::max)
}

/// Measured norms against their bounds at one output time.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub t: f64,
    pub tv: Vec<f64>,
    pub tv_bound: Vec<f64>,
    pub linf: Vec<f64>,
    /// Differentiable family only.
    pub linf_bound: Option<Vec<f64>>,
    pub grad_v_inf: f64,
}

impl BoundRow {
    pub fn tv_dominated(&self) -> bool {
        self.tv.iter().zip(&self.tv_bound).all(|(m, b)| m <= b)
    }

    pub fn linf_dominated(&self) -> bool {
        self.linf_bound
            .as_ref()
            .is_none_or(|b| self.linf.iter().zip(b).all(|(m, b)| m <= b))
    }

    /// Smallest `bound / measured` over populations.
    pub fn tv_slack(&self) -> f64 {
        self.tv
            .iter()
            .zip(&self.tv_bound)
            .map(|(m, b)| if *m > 0.0 { b / m } else { f64::INFINITY })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub family: Family,
    /// Empirical lower bound of the operator constant (deviation family).
    pub c_i_lower_bound: Option<f64>,
    pub rows: Vec<BoundRow>,
    pub notes: Vec<String>,
}

impl BoundReport {
    pub fn all_dominated(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.tv_dominated() && r.linf_dominated())
    }
}

/// Observer recording states at snapshot times and the running velocity
/// gradient, for bound evaluation after the run.
#[derive(Clone, Debug, Default)]
pub struct BoundTracker {
    grad_v: f64,
    pub samples: Vec<(f64, PopulationField, f64)>,
}

impl BoundTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn running_grad_v(&self) -> f64 {
        self.grad_v
    }

    /// Per-population `C_I` estimated from the datum and the recorded
    /// states; zero for the differentiable family.
    pub fn ci_per_population(
        &self,
        model: &ModelSpec,
        datum: &PopulationField,
    ) -> Result<Vec<f64>> {
        if model.family == Family::Differentiable {
            return Ok(vec![0.0; model.n()]);
        }
        let mut states: Vec<PopulationField> = vec![datum.clone()];
        states.extend(self.samples.iter().map(|s| s.1.clone()));
        model.ops.iter().map(|op| ci_or_zero(op, &states)).collect()
    }

    /// Bound report for a run of `model` from `datum`.
    pub fn report(&self, model: &ModelSpec, datum: &PopulationField) -> Result<BoundReport> {
        let mut notes = Vec::new();
        let c_i = self.ci_per_population(model, datum)?;
        match model.family {
            Family::Deviation => {
                notes.push("C_I is an empirical lower bound from the recorded states".into())
            }
            Family::Differentiable => {
                let off_unit = model
                    .dirs
                    .iter()
                    .any(|d| d.total.magnitude().iter().any(|&m| (m - 1.0).abs() > 1e-12));
                if off_unit {
                    notes.push("direction field is not of unit length everywhere".into());
                }
            }
        }
        let base = population_inputs(model, datum, &c_i)?;
        let mut rows = Vec::with_capacity(self.samples.len());
        for (t, state, grad) in &self.samples {
            let rec = norms(state)?;
            let (tv_bound, linf_bound) = bounds_at(model.family, &base, *t, *grad);
            rows.push(BoundRow {
                t: *t,
                tv: rec.tv,
                tv_bound,
                linf: rec.linf,
                linf_bound,
                grad_v_inf: *grad,
            });
        }
        Ok(BoundReport {
            family: model.family,
            c_i_lower_bound: (model.family == Family::Deviation)
                .then(|| c_i.iter().copied().fold(0.0, f64::max)),
            rows,
            notes,
        })
    }
}

fn ci_or_zero(op: &crate::nonlocal::NonlocalOp, states: &[PopulationField]) -> Result<f64> {
    match estimate_ci(op, states) {
        Ok(e) => Ok(e.value),
        Err(Error::Estimation(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Time-independent inputs of every population, `grad_v_inf` left at 0.
pub fn population_inputs(
    model: &ModelSpec,
    datum: &PopulationField,
    c_i: &[f64],
) -> Result<Vec<BoundInputs>> {
    (0..model.n())
        .map(|i| gather_inputs(model, datum, i, c_i.get(i).copied().unwrap_or(0.0), 0.0))
        .collect()
}

/// Per-population `(TV bounds, L∞ bounds)` at time `t` given the running
/// velocity gradient; L∞ bounds exist for the differentiable family only.
pub fn bounds_at(
    family: Family,
    inputs: &[BoundInputs],
    t: f64,
    grad_v_inf: f64,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let mut tv = Vec::with_capacity(inputs.len());
    let mut linf = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let inp = BoundInputs {
            grad_v_inf,
            ..inp.clone()
        };
        match family {
            Family::Deviation => tv.push(tv_bound_deviation(t, &inp)),
            Family::Differentiable => {
                let (l, b) = bounds_differentiable(t, &inp);
                linf.push(l);
                tv.push(b);
            }
        }
    }
    (tv, (family == Family::Differentiable).then_some(linf))
}

impl Observer for BoundTracker {
    fn on_step(
        &mut self,
        _r: &StepReport,
        state: &PopulationField,
        transport: &VelocityField,
    ) -> Result<()> {
        self.grad_v = self
            .grad_v
            .max(velocity_gradient_sup(state.grid(), transport));
        Ok(())
    }

    fn on_snapshot(&mut self, t: f64, state: &PopulationField) -> Result<()> {
        self.samples.push((t, state.clone(), self.grad_v));
        Ok(())
    }
}

fn law_differences(a: &SpeedLaw, b: &SpeedLaw) -> (f64, f64) {
    const SCAN: usize = 10_000;
    let r = a.r_max.max(b.r_max);
    (0..=SCAN).fold((0.0_f64, 0.0_f64), |(dq, ddq), k| {
        let x = r * k as f64 / SCAN as f64;
        (
            dq.max((a.q(x) - b.q(x)).abs()),
            ddq.max((a.dq(x) - b.dq(x)).abs()),
        )
    })
}

/// Measured distance between paired runs against the stability bound.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub t: f64,
    pub distance: f64,
    pub bound: LogBound,
}

impl StabilityRow {
    pub fn dominated(&self) -> bool {
        self.bound.dominates(self.distance)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub deltas: StabilityDeltas,
    pub c_i_lower_bound: f64,
    pub rows: Vec<StabilityRow>,
}

/// Runs two deviation configurations to the common snapshot times of
/// `model1` and compares their L¹ distance with the stability bound.
pub fn stability_experiment(
    model1: &ModelSpec,
    datum1: &PopulationField,
    model2: &ModelSpec,
    datum2: &PopulationField,
) -> Result<StabilityReport> {
    if model1.family != Family::Deviation || model2.family != Family::Deviation {
        return Err(Error::UnsupportedModel("deviation"));
    }
    if model1.n() != model2.n() || model1.grid != model2.grid {
        return Err(Error::config(
            "paired configurations must share grid and population count",
        ));
    }
    let mut m2 = model2.clone();
    m2.snapshots = model1.snapshots.clone();
    m2.t_max = model1.t_max;
    let mut tr1 = BoundTracker::new();
    let mut tr2 = BoundTracker::new();
    run(model1, datum1, &mut tr1)?;
    run(&m2, datum2, &mut tr2)?;

    let mut states = vec![datum1.clone(), datum2.clone()];
    states.extend(tr1.samples.iter().chain(&tr2.samples).map(|s| s.1.clone()));
    let mut c_parts = Vec::with_capacity(model1.n());
    for (op1, op2) in model1.ops.iter().zip(&model2.ops) {
        c_parts.push(ci_or_zero(op1, &states)?.max(ci_or_zero(op2, &states)?));
    }

    let g = model1.grid.as_ref();
    let mut deltas = StabilityDeltas {
        rho0_l1: datum1.l1_distance(datum2),
        ..Default::default()
    };
    for i in 0..model1.n() {
        let (dq, ddq) = law_differences(&model1.laws[i], &model2.laws[i]);
        deltas.q_inf = deltas.q_inf.max(dq);
        deltas.dq_inf = deltas.dq_inf.max(ddq);
        let mut diff = model2.dirs[i].total.clone();
        diff.add_assign_scaled(-1.0, &model1.dirs[i].total);
        deltas.dir_inf = deltas.dir_inf.max(g.vector_sup(&diff));
        deltas.div_dir_l1 = deltas.div_dir_l1.max(g.l1(&g.divergence(&diff)));
    }

    let inputs = |model: &ModelSpec, datum: &PopulationField, grad: f64| {
        (0..model.n())
            .map(|i| gather_inputs(model, datum, i, c_parts[i], grad))
            .collect::<Result<Vec<_>>>()
            .map(|v| BoundInputs::aggregate(&v))
    };
    let mut rows = Vec::with_capacity(tr1.samples.len());
    for ((t, s1, g1), (_, s2, g2)) in tr1.samples.iter().zip(&tr2.samples) {
        let grad = g1.max(*g2);
        let in1 = inputs(model1, datum1, grad)?;
        let in2 = inputs(&m2, datum2, grad)?;
        rows.push(StabilityRow {
            t: *t,
            distance: s1.l1_distance(s2),
            bound: stability_bound_deviation(*t, &in1, &in2, &deltas),
        });
    }
    Ok(StabilityReport {
        deltas,
        c_i_lower_bound: c_parts.iter().sum(),
        rows,
    })
}
