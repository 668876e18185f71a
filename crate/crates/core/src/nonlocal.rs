//! Nonlocal deviation operators and an empirical estimator of their
//! Lipschitz-type constant.

use std::sync::Arc;

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::grid::{PopulationField, VectorField};
use crate::kernel::{convolve, convolve_gradient, SampledKernel};
use crate::velocity::{DirectionField, SpeedLaw};

/// Coefficient of a weighted-sum node.
#[derive(Clone, Debug, PartialEq)]
pub enum Weight {
    Constant(f64),
    Field(Arc<Array2<f64>>),
}

impl Weight {
    fn is_finite(&self) -> bool {
        match self {
            Weight::Constant(c) => c.is_finite(),
            Weight::Field(f) => f.iter().all(|v| v.is_finite()),
        }
    }

    fn apply(&self, u: &VectorField) -> Result<VectorField> {
        match self {
            Weight::Constant(c) => Ok(u.scaled(*c)),
            Weight::Field(f) => {
                if f.dim() != u.dim() {
                    return Err(Error::Dimension {
                        expected: u.dim(),
                        found: f.dim(),
                    });
                }
                Ok(u.weighted(f))
            }
        }
    }
}

/// Operator tree. Leaves read one source population.
#[derive(Clone, Debug, PartialEq)]
pub enum NonlocalOp {
    Zero,
    /// `−ε N(∇(ρ^j ∗ η))`
    GradientAvoidance {
        eps: f64,
        source: usize,
        kernel: Arc<SampledKernel>,
    },
    /// `−ε ∇(ρ^j ∗ η)`, without saturation.
    KernelGradient {
        eps: f64,
        source: usize,
        kernel: Arc<SampledKernel>,
    },
    /// `N((ρ^j v(ρ^j) v⃗^j) ∗ η)`
    FluxPush {
        source: usize,
        law: SpeedLaw,
        dir: Arc<DirectionField>,
        kernel: Arc<SampledKernel>,
    },
    Saturate(Box<NonlocalOp>),
    WeightedSum {
        alpha: Weight,
        left: Box<NonlocalOp>,
        beta: Weight,
        right: Box<NonlocalOp>,
    },
}

impl NonlocalOp {
    pub fn gradient_avoidance(eps: f64, source: usize, kernel: Arc<SampledKernel>) -> Self {
        NonlocalOp::GradientAvoidance {
            eps,
            source,
            kernel,
        }
    }

    pub fn weighted_sum(alpha: Weight, left: NonlocalOp, beta: Weight, right: NonlocalOp) -> Self {
        NonlocalOp::WeightedSum {
            alpha,
            left: Box::new(left),
            beta,
            right: Box::new(right),
        }
    }

    /// Plain sum of the given operators; `Zero` when empty.
    pub fn sum(ops: Vec<NonlocalOp>) -> Self {
        let mut it = ops.into_iter();
        let Some(first) = it.next() else {
            return NonlocalOp::Zero;
        };
        it.fold(first, |acc, op| {
            NonlocalOp::weighted_sum(Weight::Constant(1.0), acc, Weight::Constant(1.0), op)
        })
    }

    /// Checks population indices and weights against an `n`-population state.
    pub fn validate(&self, n: usize) -> Result<()> {
        let check = |j: usize| {
            if j < n {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "operator references population {j}, only {n} exist"
                )))
            }
        };
        match self {
            NonlocalOp::Zero => Ok(()),
            NonlocalOp::GradientAvoidance { eps, source, .. }
            | NonlocalOp::KernelGradient { eps, source, .. } => {
                if !eps.is_finite() {
                    return Err(Error::config("non-finite coupling coefficient"));
                }
                check(*source)
            }
            NonlocalOp::FluxPush { source, .. } => check(*source),
            NonlocalOp::Saturate(inner) => inner.validate(n),
            NonlocalOp::WeightedSum {
                alpha,
                left,
                beta,
                right,
            } => {
                if !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::config("non-finite weight in operator"));
                }
                left.validate(n)?;
                right.validate(n)
            }
        }
    }

    /// Largest `|ε|` over gradient-avoidance leaves, weighted by constant
    /// coefficients along the path. Field weights count with their sup.
    pub fn magnitude_bound(&self) -> f64 {
        match self {
            NonlocalOp::Zero => 0.0,
            NonlocalOp::GradientAvoidance { eps, .. } => eps.abs(),
            NonlocalOp::KernelGradient { .. } => f64::INFINITY,
            NonlocalOp::FluxPush { .. } | NonlocalOp::Saturate(_) => 1.0,
            NonlocalOp::WeightedSum {
                alpha,
                left,
                beta,
                right,
            } => {
                let sup = |w: &Weight| match w {
                    Weight::Constant(c) => c.abs(),
                    Weight::Field(f) => f.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
                };
                let term = |w: &Weight, op: &NonlocalOp| {
                    let s = sup(w);
                    if s == 0.0 {
                        0.0
                    } else {
                        s * op.magnitude_bound()
                    }
                };
                term(alpha, left) + term(beta, right)
            }
        }
    }

    pub fn evaluate(&self, state: &PopulationField) -> Result<VectorField> {
        match self {
            NonlocalOp::Zero => Ok(VectorField::zeros(state.grid().shape())),
            NonlocalOp::GradientAvoidance {
                eps,
                source,
                kernel,
            } => {
                self.validate(state.n())?;
                gradient_avoidance(state, *source, *eps, kernel)
            }
            NonlocalOp::KernelGradient {
                eps,
                source,
                kernel,
            } => {
                self.validate(state.n())?;
                Ok(convolve_gradient(state.population(*source), kernel)?.scaled(-eps))
            }
            NonlocalOp::FluxPush {
                source,
                law,
                dir,
                kernel,
            } => {
                self.validate(state.n())?;
                flux_push(state, *source, law, dir, kernel)
            }
            NonlocalOp::Saturate(inner) => Ok(saturate(&inner.evaluate(state)?)),
            NonlocalOp::WeightedSum {
                alpha,
                left,
                beta,
                right,
            } => {
                let mut out = alpha.apply(&left.evaluate(state)?)?;
                let r = beta.apply(&right.evaluate(state)?)?;
                out.add_assign_scaled(1.0, &r);
                Ok(out)
            }
        }
    }
}

/// `u / √(1 + |u|²)` cellwise.
pub fn saturate(u: &VectorField) -> VectorField {
    let mut out = u.clone();
    Zip::from(&mut out.x).and(&mut out.y).par_for_each(|a, b| {
        let s = 1.0 / (1.0 + *a * *a + *b * *b).sqrt();
        *a *= s;
        *b *= s;
        // rounding can reach modulus 1 for huge inputs
        let m = a.hypot(*b);
        if m >= 1.0 {
            let shrink = (1.0 - 4.0 * f64::EPSILON) / m;
            *a *= shrink;
            *b *= shrink;
        }
    });
    out
}

pub fn gradient_avoidance(
    state: &PopulationField,
    j: usize,
    eps: f64,
    k: &SampledKernel,
) -> Result<VectorField> {
    check_source(state, j)?;
    Ok(saturate(&convolve_gradient(state.population(j), k)?).scaled(-eps))
}

pub fn flux_push(
    state: &PopulationField,
    j: usize,
    law: &SpeedLaw,
    dir: &DirectionField,
    k: &SampledKernel,
) -> Result<VectorField> {
    check_source(state, j)?;
    let q = state.population(j).mapv(|r| law.q(r));
    let flux = dir.total.weighted(&q);
    Ok(saturate(&VectorField {
        x: convolve(&flux.x, k)?,
        y: convolve(&flux.y, k)?,
    }))
}

fn check_source(state: &PopulationField, j: usize) -> Result<()> {
    if j >= state.n() {
        return Err(Error::config(format!(
            "population {j} out of range (n = {})",
            state.n()
        )));
    }
    Ok(())
}

/// Empirical lower bound for the operator constant together with the
/// largest value of each ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiEstimate {
    pub value: f64,
    /// sup|ΔI| / ‖Δρ‖, ‖div ΔI‖ / ‖Δρ‖, sup|∇I| / ‖ρ‖, ‖∇div I‖ / ‖ρ‖
    pub ratios: [f64; 4],
    pub pairs: usize,
}

fn total_l1(s: &PopulationField) -> f64 {
    s.populations().iter().map(|p| s.grid().l1(p)).sum()
}

/// Maximum over sample pairs of the four ratios controlling the operator.
/// Derivatives are second-order central differences; vectors and matrices
/// are measured in the entrywise 1-norm.
pub fn estimate_ci(op: &NonlocalOp, samples: &[PopulationField]) -> Result<CiEstimate> {
    if samples.len() < 2 {
        return Err(Error::Estimation("need at least two samples".into()));
    }
    let first = &samples[0];
    if samples.iter().any(|s| !s.same_layout(first)) {
        return Err(Error::Estimation(
            "samples must share grid and population count".into(),
        ));
    }
    op.validate(first.n())?;
    let g = first.grid();
    if g.nx < 5 || g.ny < 5 {
        return Err(Error::Estimation(
            "grid too small for central differences".into(),
        ));
    }
    let outputs = samples
        .iter()
        .map(|s| op.evaluate(s))
        .collect::<Result<Vec<_>>>()?;
    let mut ratios = [0.0_f64; 4];
    let mut pairs = 0;
    for a in 0..samples.len() {
        for b in a + 1..samples.len() {
            let d = samples[a].l1_distance(&samples[b]);
            if d == 0.0 {
                continue;
            }
            pairs += 1;
            let mut diff = outputs[a].clone();
            diff.add_assign_scaled(-1.0, &outputs[b]);
            ratios[0] = ratios[0].max(g.vector_sup(&diff) / d);
            ratios[1] = ratios[1].max(g.l1(&g.divergence(&diff)) / d);
        }
    }
    if pairs == 0 {
        return Err(Error::Estimation("all sample pairs are identical".into()));
    }
    for (s, out) in samples.iter().zip(&outputs) {
        let m = total_l1(s);
        if m == 0.0 {
            continue;
        }
        ratios[2] = ratios[2].max(g.jacobian_sup(out) / m);
        ratios[3] = ratios[3].max(g.grad_div_l1(out) / m);
    }
    let value = ratios.iter().copied().fold(0.0, f64::max);
    Ok(CiEstimate {
        value,
        ratios,
        pairs,
    })
}
