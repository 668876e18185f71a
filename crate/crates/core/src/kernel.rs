//! Separable smoothing kernels `η(x, y) = a(x) b(y)` and their fast
//! convolution through banded Toeplitz factors, `A ρ B`.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VectorField};

type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One axis factor of a separable kernel.
#[derive(Clone)]
pub enum AxisProfile {
    /// `[1 − (x/h)²]³` on `[−h, h]`, zero outside. With `h = ½` this is
    /// the factor `[1 − (2x)²]³` used by the corridor experiments.
    PolyBump { half_width: f64 },
    /// User-supplied C² profile supported in `[−half_width, half_width]`.
    Custom {
        half_width: f64,
        value: ProfileFn,
        derivative: ProfileFn,
    },
}

impl fmt::Debug for AxisProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisProfile::PolyBump { half_width } => f
                .debug_struct("PolyBump")
                .field("half_width", half_width)
                .finish(),
            AxisProfile::Custom { half_width, .. } => f
                .debug_struct("Custom")
                .field("half_width", half_width)
                .finish(),
        }
    }
}

impl PartialEq for AxisProfile {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (AxisProfile::PolyBump { half_width: a }, AxisProfile::PolyBump { half_width: b }) => {
                a == b
            }
            (
                AxisProfile::Custom {
                    half_width: a,
                    value: va,
                    derivative: da,
                },
                AxisProfile::Custom {
                    half_width: b,
                    value: vb,
                    derivative: db,
                },
            ) => a == b && Arc::ptr_eq(va, vb) && Arc::ptr_eq(da, db),
            _ => false,
        }
    }
}

impl AxisProfile {
    pub fn bump(half_width: f64) -> Self {
        AxisProfile::PolyBump { half_width }
    }

    pub fn half_width(&self) -> f64 {
        match self {
            AxisProfile::PolyBump { half_width } | AxisProfile::Custom { half_width, .. } => {
                *half_width
            }
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            AxisProfile::PolyBump { half_width: h } => {
                if x.abs() >= *h {
                    return 0.0;
                }
                let s = x / h;
                let u = 1.0 - s * s;
                u * u * u
            }
            AxisProfile::Custom {
                half_width, value, ..
            } => {
                if x.abs() >= *half_width {
                    0.0
                } else {
                    value(x)
                }
            }
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            AxisProfile::PolyBump { half_width: h } => {
                if x.abs() >= *h {
                    return 0.0;
                }
                let s = x / h;
                let u = 1.0 - s * s;
                -6.0 * u * u * x / (h * h)
            }
            AxisProfile::Custom {
                half_width,
                derivative,
                ..
            } => {
                if x.abs() >= *half_width {
                    0.0
                } else {
                    derivative(x)
                }
            }
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match self {
            AxisProfile::PolyBump { half_width: h } => {
                if x.abs() >= *h {
                    return 0.0;
                }
                let h2 = h * h;
                let u = 1.0 - x * x / h2;
                24.0 * u * x * x / (h2 * h2) - 6.0 * u * u / h2
            }
            AxisProfile::Custom { half_width, .. } => {
                let e = 1e-5 * half_width;
                (self.derivative(x + e) - self.derivative(x - e)) / (2.0 * e)
            }
        }
    }
}

/// Separable kernel description.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub x: AxisProfile,
    pub y: AxisProfile,
    /// Rescale the sampled factors so the discrete kernel mass is 1.
    pub normalize: bool,
}

impl KernelSpec {
    /// `[1 − (2x)²]³ [1 − (2y)²]³` on `[−½, ½]²`.
    pub fn corridor_bump() -> Self {
        KernelSpec {
            x: AxisProfile::bump(0.5),
            y: AxisProfile::bump(0.5),
            normalize: false,
        }
    }

    pub fn normalized(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    /// Unnormalized kernel value.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.x.value(x) * self.y.value(y)
    }

    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        [
            self.x.derivative(x) * self.y.value(y),
            self.x.value(x) * self.y.derivative(y),
        ]
    }
}

/// Banded Toeplitz matrix: `M[r, c] = weights[(r − c) + half]` for
/// `|r − c| ≤ half`, zero elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    half: usize,
    weights: Vec<f64>,
}

impl Band {
    fn sample(half: usize, step: f64, f: impl Fn(f64) -> f64) -> Band {
        let weights = (0..=2 * half)
            .map(|k| f((k as f64 - half as f64) * step) * step)
            .collect();
        Band { half, weights }
    }

    pub fn half_bandwidth(&self) -> usize {
        self.half
    }

    /// Entry for offset `row − col`.
    #[inline]
    pub fn at(&self, offset: isize) -> f64 {
        let k = offset + self.half as isize;
        if k < 0 || k as usize >= self.weights.len() {
            0.0
        } else {
            self.weights[k as usize]
        }
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn scale(&mut self, c: f64) {
        self.weights.iter_mut().for_each(|w| *w *= c);
    }

    pub fn to_dense(&self, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(r, c)| self.at(r as isize - c as isize))
    }
}

/// A kernel sampled on a grid: `A_ih = a(x_i − x_h) dx`,
/// `B_kj = b(y_j − y_k) dy`, plus the derivative factors.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledKernel {
    pub spec: KernelSpec,
    pub a: Band,
    pub b: Band,
    pub ax: Band,
    pub by: Band,
    /// Discrete L¹ norm of the sampled kernel.
    pub mass: f64,
    shape: (usize, usize),
    scale: (f64, f64),
}

pub fn sample_kernel(spec: &KernelSpec, grid: &GridSpec) -> Result<SampledKernel> {
    let (hx, hy) = (spec.x.half_width(), spec.y.half_width());
    if hx < grid.dx || hy < grid.dy {
        return Err(Error::config(format!(
            "kernel support ({hx}, {hy}) is smaller than one cell ({}, {})",
            grid.dx, grid.dy
        )));
    }
    let ext = grid.bounds();
    if 2.0 * hx > ext.width() || 2.0 * hy > ext.height() {
        return Err(Error::config("kernel support does not fit inside the grid"));
    }
    let half_x = (hx / grid.dx).ceil() as usize;
    let half_y = (hy / grid.dy).ceil() as usize;

    let mut a = Band::sample(half_x, grid.dx, |x| spec.x.value(x));
    let mut ax = Band::sample(half_x, grid.dx, |x| spec.x.derivative(x));
    let mut b = Band::sample(half_y, grid.dy, |y| spec.y.value(y));
    let mut by = Band::sample(half_y, grid.dy, |y| spec.y.derivative(y));

    let (mut sx, mut sy) = (1.0, 1.0);
    if spec.normalize {
        sx = 1.0 / a.sum();
        sy = 1.0 / b.sum();
        a.scale(sx);
        ax.scale(sx);
        b.scale(sy);
        by.scale(sy);
    }
    let mass = a.sum() * b.sum();
    if !(mass > 0.0) {
        return Err(Error::config("sampled kernel has no mass"));
    }
    Ok(SampledKernel {
        spec: spec.clone(),
        a,
        b,
        ax,
        by,
        mass,
        shape: grid.shape(),
        scale: (sx, sy),
    })
}

impl SampledKernel {
    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    /// Kernel value including the normalization factor, if any.
    pub fn eta(&self, x: f64, y: f64) -> f64 {
        self.scale.0 * self.scale.1 * self.spec.value(x, y)
    }

    /// `(sx, sy)` factor rescaling applied by normalization.
    pub fn factor_scales(&self) -> (f64, f64) {
        self.scale
    }

    fn check(&self, field: &ArrayView2<f64>) -> Result<()> {
        if field.dim() != self.shape {
            return Err(Error::Dimension {
                expected: self.shape,
                found: field.dim(),
            });
        }
        Ok(())
    }
}

/// `out_ik = Σ_h M_ih f_hk`, summing h in increasing order.
fn apply_rows(m: &Band, f: &ArrayView2<f64>) -> Array2<f64> {
    let (nx, ny) = f.dim();
    let half = m.half_bandwidth() as isize;
    let mut out = Array2::<f64>::zeros((nx, ny));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let lo = (i as isize - half).max(0) as usize;
            let hi = ((i as isize + half) as usize).min(nx - 1);
            for h in lo..=hi {
                let c = m.at(i as isize - h as isize);
                if c != 0.0 {
                    row.scaled_add(c, &f.row(h));
                }
            }
        });
    out
}

/// `out_ij = Σ_k f_ik M_kj` with `M_kj = band(j − k)`, k increasing.
fn apply_cols(f: &Array2<f64>, m: &Band) -> Array2<f64> {
    let (nx, ny) = f.dim();
    let half = m.half_bandwidth() as isize;
    let mut out = Array2::<f64>::zeros((nx, ny));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(f.axis_iter(Axis(0)))
        .for_each(|(mut row, src)| {
            for j in 0..ny {
                let lo = (j as isize - half).max(0) as usize;
                let hi = ((j as isize + half) as usize).min(ny - 1);
                let mut acc = 0.0;
                for k in lo..=hi {
                    acc += src[k] * m.at(j as isize - k as isize);
                }
                row[j] = acc;
            }
        });
    out
}

/// `ρ ∗ η` on the grid, with `ρ` extended by zero outside the domain.
pub fn convolve(field: &Array2<f64>, k: &SampledKernel) -> Result<Array2<f64>> {
    let v = field.view();
    k.check(&v)?;
    Ok(apply_cols(&apply_rows(&k.a, &v), &k.b))
}

/// `∇(ρ ∗ η) = ρ ∗ ∇η`, using the differentiated kernel factors.
pub fn convolve_gradient(field: &Array2<f64>, k: &SampledKernel) -> Result<VectorField> {
    let v = field.view();
    k.check(&v)?;
    let x = apply_cols(&apply_rows(&k.ax, &v), &k.b);
    let y = apply_cols(&apply_rows(&k.a, &v), &k.by);
    Ok(VectorField { x, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, Rect};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn square(n: usize, len: f64) -> GridSpec {
        let r = Rect::new(-len / 2.0, len / 2.0, -len / 2.0, len / 2.0);
        let d = len / n as f64;
        make_grid(r, d, d, r, vec![]).unwrap()
    }

    /// Direct double sum over all source cells.
    fn brute_force(field: &Array2<f64>, g: &GridSpec, spec: &KernelSpec) -> Array2<f64> {
        let (nx, ny) = g.shape();
        Array2::from_shape_fn((nx, ny), |(i, j)| {
            let mut acc = 0.0;
            for h in 0..nx {
                for k in 0..ny {
                    let w =
                        spec.value(g.x_center(i) - g.x_center(h), g.y_center(j) - g.y_center(k));
                    acc += w * field[[h, k]];
                }
            }
            acc * g.dx * g.dy
        })
    }

    fn gauss_quadrature_mass(p: &AxisProfile) -> f64 {
        // composite 5-point Gauss–Legendre on 200 panels
        let nodes = [
            (0.0, 0.568_888_888_888_888_9),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
            (0.906_179_845_938_664, 0.236_926_885_056_189_08),
        ];
        let h = p.half_width();
        let panels = 200;
        let w = 2.0 * h / panels as f64;
        (0..panels)
            .map(|k| {
                let c = -h + (k as f64 + 0.5) * w;
                nodes
                    .iter()
                    .map(|(t, wt)| wt * p.value(c + 0.5 * w * t))
                    .sum::<f64>()
                    * 0.5
                    * w
            })
            .sum()
    }

    #[test]
    fn bump_origin_and_outside() {
        let k = KernelSpec::corridor_bump();
        assert_eq!(k.value(0.0, 0.0), 1.0);
        assert_eq!(k.value(0.6, 0.0), 0.0);
        assert_eq!(k.value(0.1, -0.51), 0.0);
        assert_eq!(k.value(0.5, 0.2), 0.0);
    }

    #[test]
    fn continuum_mass_is_16_over_35_squared() {
        let m = gauss_quadrature_mass(&AxisProfile::bump(0.5));
        assert_relative_eq!(m, 16.0 / 35.0, epsilon = 1e-13);
        let g = square(640, 16.0);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        assert!((sk.mass - (16.0f64 / 35.0).powi(2)).abs() < 1e-4);
    }

    #[test]
    fn discrete_mass_converges() {
        let exact = (16.0f64 / 35.0).powi(2);
        let errs: Vec<f64> = [40, 80, 160]
            .iter()
            .map(|&n| {
                let sk = sample_kernel(&KernelSpec::corridor_bump(), &square(n, 4.0)).unwrap();
                (sk.mass - exact).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn normalized_mass_is_one() {
        let g = square(64, 3.2);
        let sk = sample_kernel(&KernelSpec::corridor_bump().normalized(true), &g).unwrap();
        assert!((sk.mass - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn bandwidth_matches_support() {
        let g = square(640, 16.0);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        assert_eq!(sk.a.half_bandwidth(), 20);
        assert_eq!(sk.b.half_bandwidth(), 20);
    }

    #[test]
    fn support_smaller_than_cell_rejected() {
        let g = square(8, 4.0);
        let spec = KernelSpec {
            x: AxisProfile::bump(0.2),
            y: AxisProfile::bump(0.2),
            normalize: false,
        };
        assert!(sample_kernel(&spec, &g).is_err());
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let g = square(32, 3.2);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let wrong = Array2::zeros((31, 32));
        assert!(matches!(
            convolve(&wrong, &sk),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let g = square(32, 3.2);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let out = convolve(&g.zeros(), &sk).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_field_interior_is_mass() {
        let g = square(64, 3.2);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let c = 0.7;
        let out = convolve(&Array2::from_elem(g.shape(), c), &sk).unwrap();
        let w = sk.a.half_bandwidth();
        for i in w..g.nx - w {
            for j in w..g.ny - w {
                assert!((out[[i, j]] - c * sk.mass).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_cell_reproduces_kernel() {
        let g = square(64, 3.2);
        let spec = KernelSpec::corridor_bump();
        let sk = sample_kernel(&spec, &g).unwrap();
        let mut f = g.zeros();
        f[[30, 33]] = 1.0;
        let out = convolve(&f, &sk).unwrap();
        let oracle = brute_force(&f, &g, &spec);
        for (a, b) in out.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-15);
        }
        assert_relative_eq!(out[[30, 33]], g.dx * g.dy, epsilon = 1e-15);
    }

    #[test]
    fn matrix_product_matches_dense_matrices() {
        let g = square(24, 2.4);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let f = Array2::from_shape_fn(g.shape(), |_| rng.random::<f64>());
        let dense = sk.a.to_dense(g.nx).dot(&f).dot(&sk.b.to_dense(g.ny).t());
        let fast = convolve(&f, &sk).unwrap();
        for (a, b) in dense.iter().zip(fast.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn random_fields_match_brute_force() {
        let g = square(64, 3.2);
        let spec = KernelSpec::corridor_bump();
        let sk = sample_kernel(&spec, &g).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for _ in 0..3 {
            let f = Array2::from_shape_fn(g.shape(), |_| rng.random::<f64>());
            let fast = convolve(&f, &sk).unwrap();
            let slow = brute_force(&f, &g, &spec);
            let err = fast
                .iter()
                .zip(slow.iter())
                .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-12, "max abs error {err}");
        }
    }

    #[test]
    fn linear_in_field() {
        let g = square(48, 4.8);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let f = Array2::from_shape_fn(g.shape(), |_| rng.random::<f64>());
        let h = Array2::from_shape_fn(g.shape(), |_| rng.random::<f64>());
        let (a, b) = (1.7, -0.3);
        let lhs = convolve(&(&f * a + &h * b), &sk).unwrap();
        let rhs = convolve(&f, &sk).unwrap() * a + convolve(&h, &sk).unwrap() * b;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn output_bounded_by_sup_times_mass() {
        let g = square(48, 4.8);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let f = Array2::from_shape_fn(g.shape(), |_| rng.random_range(-1.0..1.0));
        let bound = g.linf(&f) * sk.mass;
        let out = convolve(&f, &sk).unwrap();
        assert!(out.iter().all(|v| v.abs() <= bound + 1e-14));
    }

    #[test]
    fn gradient_of_constant_vanishes_inside() {
        let g = square(64, 3.2);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let grad = convolve_gradient(&Array2::from_elem(g.shape(), 0.4), &sk).unwrap();
        let w = sk.a.half_bandwidth();
        for i in w..g.nx - w {
            for j in w..g.ny - w {
                assert!(grad.x[[i, j]].abs() < 1e-13 && grad.y[[i, j]].abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gradient_of_ramp_is_mass() {
        let g = square(160, 2.0);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let ramp = g.sample(|x, _| x);
        let grad = convolve_gradient(&ramp, &sk).unwrap();
        let conv = convolve(&ramp, &sk).unwrap();
        let w = sk.a.half_bandwidth() + 1;
        for i in w..g.nx - w {
            for j in w..g.ny - w {
                assert!(
                    (grad.x[[i, j]] - sk.mass).abs() < 1e-6,
                    "{}",
                    grad.x[[i, j]]
                );
                assert!(grad.y[[i, j]].abs() < 1e-6);
                let fd = (conv[[i + 1, j]] - conv[[i - 1, j]]) / (2.0 * g.dx);
                assert!((fd - grad.x[[i, j]]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn mirrored_field_flips_x_gradient() {
        let g = square(40, 4.0);
        let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
        let f = g.sample(|x, y| (-(x - 0.4).powi(2) - y * y).exp());
        let m = g.sample(|x, y| (-(-x - 0.4).powi(2) - y * y).exp());
        let gf = convolve_gradient(&f, &sk).unwrap();
        let gm = convolve_gradient(&m, &sk).unwrap();
        for i in 0..g.nx {
            for j in 0..g.ny {
                assert!((gf.x[[i, j]] + gm.x[[g.nx - 1 - i, j]]).abs() < 1e-12);
                assert!((gf.y[[i, j]] - gm.y[[g.nx - 1 - i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_agrees_with_central_differences_to_second_order() {
        let err_at = |n: usize| {
            let g = square(n, 4.0);
            let sk = sample_kernel(&KernelSpec::corridor_bump(), &g).unwrap();
            let f = g.sample(|x, y| (-(x * x + 2.0 * y * y)).exp());
            let grad = convolve_gradient(&f, &sk).unwrap();
            let conv = convolve(&f, &sk).unwrap();
            let mut err = 0.0_f64;
            for i in 1..g.nx - 1 {
                for j in 1..g.ny - 1 {
                    let fx = (conv[[i + 1, j]] - conv[[i - 1, j]]) / (2.0 * g.dx);
                    let fy = (conv[[i, j + 1]] - conv[[i, j - 1]]) / (2.0 * g.dy);
                    err = err
                        .max((fx - grad.x[[i, j]]).abs())
                        .max((fy - grad.y[[i, j]]).abs());
                }
            }
            err
        };
        let (e1, e2) = (err_at(40), err_at(80));
        assert!(e1 / e2 >= 3.5, "ratio {}", e1 / e2);
    }
}
