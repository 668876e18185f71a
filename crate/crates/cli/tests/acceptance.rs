//! Acceptance suite. Each test prints one `PASS`/`FAIL` line before
//! asserting; run with `--nocapture` to see them.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use nlcrowd_cli::{crossing, evacuation, run_command, smooth, RunConfig};
use nlcrowd_core::{
    check_invariance, convolve, cost_and_gradient, run, run_recorded, run_with_dts, sample_kernel,
    stability_experiment, wd, BoundTracker, CostSpec, GateauxProbe, KernelSpec, Observer,
    PopulationField, Result, SpeedLaw, StepReport, VelocityField,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn verdict(n: u32, ok: bool, detail: &str) {
    println!(
        "{} criterion {n:>2}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn coarse(mut cfg: RunConfig, t_max: f64, snapshots: Vec<f64>) -> RunConfig {
    cfg.mesh = 0.1;
    cfg.t_max = t_max;
    cfg.snapshots = snapshots;
    cfg
}

struct Balance {
    initial: f64,
    escaped: f64,
    worst: f64,
}

impl Observer for Balance {
    fn on_step(&mut self, r: &StepReport, _: &PopulationField, _: &VelocityField) -> Result<()> {
        self.escaped += r.outflow.iter().sum::<f64>();
        let total: f64 = r.mass.iter().sum();
        self.worst = self
            .worst
            .max((total + self.escaped - self.initial).abs() / self.initial);
        Ok(())
    }
}

#[test]
fn criterion_01_conservation() {
    let start = Instant::now();
    let (model, datum) = coarse(crossing(), 1.0, vec![]).build().unwrap();
    let initial = datum.total_mass();
    let mut obs = Balance {
        initial,
        escaped: 0.0,
        worst: 0.0,
    };
    let out = run(&model, &datum, &mut obs).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mass_ok = (initial - (13.824 + 10.752)).abs() <= 1e-10 * initial;
    let ok = obs.worst <= 1e-10 && secs < 60.0 && mass_ok && !out.reports.is_empty();
    verdict(
        1,
        ok,
        &format!(
            "initial mass {initial}, worst relative imbalance {:.3e} over {} steps, {secs:.2} s",
            obs.worst,
            out.reports.len()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_02_maximum_principle() {
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, cfg) in [("crossing", crossing()), ("evacuation", evacuation())] {
        let (model, datum) = coarse(cfg, 2.0, vec![]).build().unwrap();
        let out = run_recorded(&model, &datum, &mut ()).unwrap();
        let rep = check_invariance(out.trajectory.as_ref().unwrap(), 1.0).unwrap();
        let (lo, hi) = rep.extremes();
        ok &= rep.pass && lo >= -1e-6 && hi <= 1.0 + 1e-6;
        detail.push(format!("{name} range [{lo:.3e}, {hi:.6}]"));
    }
    verdict(2, ok, &detail.join("; "));
    assert!(ok);
}

#[test]
fn criterion_03_convolution_oracle() {
    let cfg = smooth();
    let g = cfg.grid().unwrap();
    assert_eq!(g.shape(), (64, 64));
    let spec = KernelSpec::corridor_bump();
    let sk = sample_kernel(&spec, &g).unwrap();
    let mut rng = StdRng::seed_from_u64(35);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let f = Array2::from_shape_fn(g.shape(), |_| rng.random::<f64>());
        let fast = convolve(&f, &sk).unwrap();
        for i in 0..g.nx {
            for j in 0..g.ny {
                let mut acc = 0.0;
                for h in 0..g.nx {
                    for k in 0..g.ny {
                        acc += spec
                            .value(g.x_center(i) - g.x_center(h), g.y_center(j) - g.y_center(k))
                            * f[[h, k]];
                    }
                }
                worst = worst.max((fast[[i, j]] - acc * g.dx * g.dy).abs());
            }
        }
    }
    let fine = crossing().grid().unwrap();
    assert_eq!(fine.dx, 0.025);
    let mass = sample_kernel(&spec, &fine).unwrap().mass;
    let target = (16.0_f64 / 35.0).powi(2);
    let ok = worst <= 1e-12 && (mass - target).abs() <= 1e-4;
    verdict(
        3,
        ok,
        &format!(
            "max |fast − brute| {worst:.3e} on 50 fields; kernel mass {mass:.10} vs {target:.10}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_04_wd() {
    let e = [
        (wd(1) - 1.0).abs(),
        (wd(2) - PI / 4.0).abs(),
        (wd(3) - 2.0 / 3.0).abs(),
    ];
    let ok = e[0] <= 1e-12 && e[1] <= 1e-10 && e[2] <= 1e-10;
    verdict(
        4,
        ok,
        &format!("errors {:.1e}, {:.1e}, {:.1e}", e[0], e[1], e[2]),
    );
    assert!(ok);
}

const OUTPUT_TIMES: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[test]
fn criterion_05_tv_bound() {
    let (model, datum) = coarse(crossing(), 0.5, OUTPUT_TIMES.to_vec())
        .build()
        .unwrap();
    let mut tracker = BoundTracker::new();
    run(&model, &datum, &mut tracker).unwrap();
    let rep = tracker.report(&model, &datum).unwrap();
    let ok = rep.rows.len() == OUTPUT_TIMES.len() && rep.all_dominated();
    let slack: Vec<String> = rep
        .rows
        .iter()
        .map(|r| format!("t={}: {:.2e}", r.t, r.tv_slack()))
        .collect();
    verdict(
        5,
        ok,
        &format!(
            "C_I ≥ {:.3}; TV slack {}",
            rep.c_i_lower_bound.unwrap(),
            slack.join(", ")
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_06_stability() {
    let (model, datum) = coarse(crossing(), 0.5, OUTPUT_TIMES.to_vec())
        .build()
        .unwrap();
    let mut other = datum.clone();
    let scale = 1.0 + 0.1 / datum.mass(0);
    other.population_mut(0).mapv_inplace(|v| v * scale);
    let size = datum.l1_distance(&other);
    let rep = stability_experiment(&model, &datum, &model, &other).unwrap();
    let ok = (size - 0.1).abs() < 1e-12
        && rep.rows.len() == OUTPUT_TIMES.len()
        && rep.rows.iter().all(|r| r.dominated());
    let rows: Vec<String> = rep
        .rows
        .iter()
        .map(|r| {
            format!(
                "t={}: d={:.4} log10 slack {:.1}",
                r.t,
                r.distance,
                r.bound.log10_slack(r.distance)
            )
        })
        .collect();
    verdict(
        6,
        ok,
        &format!("perturbation {size:.3}; {}", rows.join(", ")),
    );
    assert!(ok);
}

const HS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn smooth_direction(datum: &PopulationField) -> PopulationField {
    nlcrowd_cli::default_direction(datum)
}

#[test]
fn criterion_07_gateaux() {
    let cfg = smooth();
    let (model, datum) = cfg.build().unwrap();
    let sigma = smooth_direction(&datum);
    let probe = GateauxProbe::new(&model, &datum, &sigma, cfg.t_max).unwrap();
    let r: Vec<f64> = HS.iter().map(|&h| probe.residual(h).unwrap()).collect();
    let per_h: Vec<f64> = r.iter().zip(HS).map(|(r, h)| r / h).collect();
    let decreasing = per_h.windows(2).all(|w| w[1] < w[0]);
    let ratios: Vec<f64> = r.windows(2).map(|w| w[1] / w[0]).collect();
    let ratio_ok = ratios.iter().all(|&q| q <= 0.6);

    let mut flat = model.clone();
    flat.laws = vec![SpeedLaw::constant(1.0, 1.0).unwrap(); model.n()];
    let flat_probe = GateauxProbe::new(&flat, &datum, &sigma, cfg.t_max).unwrap();
    let flat_r = HS
        .iter()
        .map(|&h| flat_probe.residual(h).unwrap())
        .fold(0.0, f64::max);

    let ok = decreasing && ratio_ok && flat_r <= 1e-10;
    verdict(
        7,
        ok,
        &format!(
            "r(h)/h {}; r(h/2)/r(h) {ratios:.3?}; constant speed max r {flat_r:.1e}",
            sci(&per_h)
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_08_cost_gradient() {
    let cfg = smooth();
    let (model, datum) = cfg.build().unwrap();
    let sigma = smooth_direction(&datum);
    let t = cfg.t_max;
    let tr = run_recorded(&model, &datum, &mut ())
        .unwrap()
        .trajectory
        .unwrap();
    let g = datum.grid();
    let cost = CostSpec {
        f: Arc::new(|r: &[f64]| r[0] * r[0] + r[0] * r[1] + 0.5 * r[1] * r[1] * r[1]),
        df: Arc::new(|r: &[f64], out: &mut [f64]| {
            out[0] = 2.0 * r[0] + r[1];
            out[1] = r[0] + 1.5 * r[1] * r[1];
        }),
        psi: g.sample(|x, y| (-(x - 0.5).powi(2) - y * y).exp()),
        t,
    };
    let (j0, dj) = cost_and_gradient(&tr, &cost, &sigma).unwrap();
    let errs: Vec<f64> = HS
        .iter()
        .map(|&h| {
            let pert = run_with_dts(&model, &datum.add_scaled(h, &sigma), &tr.dts).unwrap();
            ((cost.value(&pert).unwrap() - j0) / h - dj).abs()
        })
        .collect();
    let c = 1.25 * (errs[0] - 1e-8).max(0.0) / HS[0];
    let within = errs.iter().zip(HS).all(|(e, h)| *e <= c * h + 1e-8);
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);

    let mass_cost = CostSpec::total_density(Array2::ones(g.shape()), t);
    let (_, dj_mass) = cost_and_gradient(&tr, &mass_cost, &sigma).unwrap();
    let mass_err = (dj_mass - sigma.total_mass()).abs();

    let ok = within && decreasing && mass_err <= 1e-10;
    verdict(
        8,
        ok,
        &format!(
            "DJ {dj:.6}; |FD − DJ| {} with C = {c:.3}; mass identity error {mass_err:.1e}",
            sci(&errs)
        ),
    );
    assert!(ok);
}

struct Mirror {
    worst: f64,
}

impl Observer for Mirror {
    fn on_step(&mut self, _: &StepReport, s: &PopulationField, _: &VelocityField) -> Result<()> {
        let (a, b) = (s.population(0), s.population(1));
        let nx = a.nrows();
        for ((i, j), v) in a.indexed_iter() {
            self.worst = self.worst.max((v - b[[nx - 1 - i, j]]).abs());
        }
        Ok(())
    }
}

#[test]
fn criterion_09_symmetry() {
    let mut cfg = coarse(crossing(), 1.0, vec![]);
    cfg.populations[1].datum = vec![nlcrowd_cli::DatumTerm::Box {
        value: 0.9,
        rect: nlcrowd_core::Rect::new(3.2, 6.4, -2.4, 2.4),
    }];
    let (model, datum) = cfg.build().unwrap();
    let mut obs = Mirror { worst: 0.0 };
    Mirror::on_step(
        &mut obs,
        &dummy_report(),
        &datum,
        &VelocityField {
            t: 0.0,
            components: vec![],
        },
    )
    .unwrap();
    run(&model, &datum, &mut obs).unwrap();
    let ok = obs.worst <= 1e-10;
    verdict(
        9,
        ok,
        &format!("max |ρ²(x, y) − ρ¹(−x, y)| = {:.3e} for t ≤ 1", obs.worst),
    );
    assert!(ok);
}

fn dummy_report() -> StepReport {
    StepReport {
        step: 0,
        t: 0.0,
        dt: 0.0,
        mass: vec![],
        min: vec![],
        max: vec![],
        outflow: vec![],
    }
}

struct Overlap {
    every: usize,
    series: Vec<(f64, f64)>,
    best: Option<(f64, f64, PopulationField)>,
}

impl Observer for Overlap {
    fn on_step(&mut self, r: &StepReport, s: &PopulationField, _: &VelocityField) -> Result<()> {
        if !r.step.is_multiple_of(self.every) {
            return Ok(());
        }
        let g = s.grid();
        let ov = (s.population(0) * s.population(1)).sum() * g.cell_area();
        self.series.push((r.t, ov));
        if self.best.as_ref().is_none_or(|b| ov > b.1) {
            self.best = Some((r.t, ov, s.clone()));
        }
        Ok(())
    }
}

/// [1, 2, 1]/4 filter; removes the odd-even mode of the scheme exactly.
fn dealias(p: &[f64]) -> Vec<f64> {
    (0..p.len())
        .map(|j| {
            let lo = p[j.saturating_sub(1)];
            let hi = p[(j + 1).min(p.len() - 1)];
            0.25 * lo + 0.5 * p[j] + 0.25 * hi
        })
        .collect()
}

/// Prominence of each strict local maximum away from the ends: height above
/// the higher of the two lowest points reached before climbing higher.
fn prominences(p: &[f64]) -> Vec<(usize, f64)> {
    let n = p.len();
    (1..n - 1)
        .filter(|&j| p[j] > p[j - 1] && p[j] >= p[j + 1])
        .map(|j| {
            let side = |range: &mut dyn Iterator<Item = usize>| {
                let mut low = p[j];
                for k in range {
                    if p[k] > p[j] {
                        break;
                    }
                    low = low.min(p[k]);
                }
                low
            };
            let left = side(&mut (0..j).rev());
            let right = side(&mut (j + 1..n));
            (j, p[j] - left.max(right))
        })
        .collect()
}

/// Maxima of the de-aliased profile rising at least `frac` of its peak above
/// their surroundings.
fn interior_maxima(p: &[f64], frac: f64) -> Vec<(usize, f64)> {
    let s = dealias(p);
    let top = s.iter().copied().fold(0.0, f64::max);
    prominences(&s)
        .into_iter()
        .filter(|&(_, h)| h >= frac * top)
        .collect()
}

const LANE_PROMINENCE: f64 = 0.01;

#[test]
fn criterion_10_lanes() {
    let mut cfg = crossing();
    cfg.mesh = 0.05;
    cfg.snapshots.clear();
    let (model, datum) = cfg.build().unwrap();
    let mut obs = Overlap {
        every: 5,
        series: Vec::new(),
        best: None,
    };
    run(&model, &datum, &mut obs).unwrap();
    let (t_peak, peak, state) = obs.best.unwrap();
    let after = obs
        .series
        .iter()
        .filter(|(t, _)| *t > t_peak)
        .map(|s| s.1)
        .fold(f64::INFINITY, f64::min);
    let drop = 1.0 - after / peak;

    let g = state.grid();
    let (a, b) = (state.population(0), state.population(1));
    let column: Vec<f64> = (0..g.nx)
        .map(|i| (0..g.ny).map(|j| a[[i, j]] * b[[i, j]]).sum())
        .collect();
    let top = column.iter().copied().fold(0.0, f64::max);
    let zone: Vec<usize> = (0..g.nx).filter(|&i| column[i] >= 0.1 * top).collect();
    let rows: Vec<usize> = (0..g.ny)
        .filter(|&j| g.room.y_min < g.y_center(j) && g.y_center(j) < g.room.y_max)
        .collect();
    let profile: Vec<f64> = rows
        .iter()
        .map(|&j| zone.iter().map(|&i| a[[i, j]]).sum::<f64>() / zone.len() as f64)
        .collect();
    let found = interior_maxima(&profile, LANE_PROMINENCE);
    let maxima = found.len();
    let top_profile = dealias(&profile).iter().copied().fold(0.0, f64::max);

    let ok = peak > 0.0 && drop >= 0.2 && maxima >= 2;
    verdict(
        10,
        ok,
        &format!(
            "overlap peak {peak:.4} at t = {t_peak:.3}, later minimum {after:.4} ({:.0}% drop); {maxima} interior maxima of ρ¹ across x ∈ [{:.2}, {:.2}] at y = {:.3?} with relative prominence {:.4?}",
            100.0 * drop,
            g.x_center(zone[0]),
            g.x_center(*zone.last().unwrap()),
            found.iter().map(|(k, _)| g.y_center(rows[*k])).collect::<Vec<_>>(),
            found.iter().map(|(_, h)| h / top_profile).collect::<Vec<_>>()
        ),
    );
    assert!(ok);
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn criterion_11_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let mut cfg = coarse(crossing(), 0.5, vec![0.0, 0.25, 0.5]);
        cfg.out_dir = tmp.path().join(format!("run{k}"));
        run_command(&cfg).unwrap();
        outputs.push(files(&cfg.out_dir));
    }
    let names: Vec<&str> = outputs[0].iter().map(|f| f.0.as_str()).collect();
    let ok = outputs[0] == outputs[1] && names.contains(&"diagnostics.csv") && names.len() >= 7;
    verdict(
        11,
        ok,
        &format!(
            "{} files identical byte for byte: {}",
            names.len(),
            names.join(" ")
        ),
    );
    assert!(ok);
}
