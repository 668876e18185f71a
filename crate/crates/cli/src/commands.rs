//! Subcommand drivers shared by the binary and the tests.

use std::path::PathBuf;

use log::info;
use nlcrowd_core::{
    check_invariance, run, stability_experiment, Error, Family, GateauxProbe, InvarianceReport,
    PopulationField, Result,
};

use crate::config::RunConfig;
use crate::output::{bounds_csv, stability_csv, write_text, Recorder};

/// What a command produced, plus any bound or range violations found.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
    pub violations: Vec<String>,
}

/// Simulates `cfg`, writing snapshots, `diagnostics.csv` and `bounds.csv`.
pub fn run_command(cfg: &RunConfig) -> Result<Outcome> {
    let (model, datum) = cfg.build()?;
    let dir = cfg.out_dir.clone();
    let mut rec = Recorder::new(&datum, cfg.cadence, Some(dir.clone()))?;
    let out = run(&model, &datum, &mut rec)?;
    rec.close(&out)?;

    let mut outcome = Outcome::default();
    let diag = dir.join("diagnostics.csv");
    write_text(&diag, &rec.diagnostics_csv(&model, &datum)?)?;
    let report = rec.tracker.report(&model, &datum)?;
    let bounds = dir.join("bounds.csv");
    write_text(&bounds, &bounds_csv(&report))?;
    outcome.files.append(&mut rec.files);
    outcome.files.extend([diag, bounds]);

    let inv = InvarianceReport::from_reports(&out.reports, model.r_max);
    if model.family == Family::Deviation && !inv.pass {
        let (lo, hi) = inv.extremes();
        outcome.violations.push(format!(
            "density range [{lo}, {hi}] leaves [0, {}]",
            model.r_max
        ));
    }
    for row in report
        .rows
        .iter()
        .filter(|r| !(r.tv_dominated() && r.linf_dominated()))
    {
        outcome
            .violations
            .push(format!("measured norm exceeds its bound at t = {}", row.t));
    }
    for note in &report.notes {
        info!("{note}");
    }
    let total0 = datum.total_mass();
    let escaped: f64 = out.escaped.iter().sum();
    outcome.summary.push(format!(
        "t = {} after {} steps; mass {} + escaped {} (initial {})",
        out.t(),
        out.reports.len(),
        out.state.total_mass(),
        escaped,
        total0
    ));
    if let Some(c) = report.c_i_lower_bound {
        outcome.summary.push(format!("C_I lower bound {c}"));
    }
    let worst = report
        .rows
        .iter()
        .map(|r| r.tv_slack())
        .fold(f64::INFINITY, f64::min);
    outcome
        .summary
        .push(format!("smallest TV slack (bound / measured) {worst}"));
    Ok(outcome)
}

/// Same run as [`run_command`] with the bound table echoed.
pub fn bounds_command(cfg: &RunConfig) -> Result<Outcome> {
    let mut outcome = run_command(cfg)?;
    let text =
        std::fs::read_to_string(cfg.out_dir.join("bounds.csv")).map_err(|source| Error::Io {
            path: cfg.out_dir.join("bounds.csv"),
            source,
        })?;
    outcome.summary.extend(text.lines().map(str::to_string));
    Ok(outcome)
}

/// Smooth signed direction for derivative checks.
pub fn default_direction(datum: &PopulationField) -> PopulationField {
    let g = datum.grid();
    let data = (0..datum.n())
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            g.sample(|x, y| s * (0.5 * x + 0.3 * y).sin() * (-(x * x + y * y) / 1.5).exp())
        })
        .collect();
    PopulationField::new(datum.grid_arc().clone(), data).expect("datum layout")
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateauxRow {
    pub h: f64,
    pub residual: f64,
    pub ratio_to_previous: Option<f64>,
}

/// `r(h)` over the `h` sweep at `cfg.t_max` for the default direction.
pub fn gateaux_table(cfg: &RunConfig, hs: &[f64]) -> Result<Vec<GateauxRow>> {
    let (model, datum) = cfg.build()?;
    let sigma = default_direction(&datum);
    let probe = GateauxProbe::new(&model, &datum, &sigma, cfg.t_max)?;
    let mut rows: Vec<GateauxRow> = Vec::with_capacity(hs.len());
    for &h in hs {
        let r = probe.residual(h)?;
        let ratio = rows.last().map(|p| r / p.residual);
        rows.push(GateauxRow {
            h,
            residual: r,
            ratio_to_previous: ratio,
        });
    }
    Ok(rows)
}

pub fn gateaux_command(cfg: &RunConfig, hs: &[f64]) -> Result<Outcome> {
    let rows = gateaux_table(cfg, hs)?;
    let mut text = String::from("h,r,r_over_h,ratio\n");
    for r in &rows {
        text.push_str(&crate::output::format_value(r.h));
        for v in [
            r.residual,
            r.residual / r.h,
            r.ratio_to_previous.unwrap_or(f64::NAN),
        ] {
            text.push(',');
            text.push_str(&crate::output::format_value(v));
        }
        text.push('\n');
    }
    let path = cfg.out_dir.join("gateaux.csv");
    write_text(&path, &text)?;
    let mut outcome = Outcome {
        summary: text.lines().map(str::to_string).collect(),
        files: vec![path],
        violations: Vec::new(),
    };
    let increasing = rows
        .windows(2)
        .any(|w| w[1].residual / w[1].h > w[0].residual / w[0].h);
    if increasing {
        outcome
            .violations
            .push("r(h)/h does not decrease along the sweep".into());
    }
    Ok(outcome)
}

/// Paired runs whose first population differs by a rescaling of L¹ size
/// `perturbation`.
pub fn stability_command(cfg: &RunConfig, perturbation: f64) -> Result<Outcome> {
    let (model, datum) = cfg.build()?;
    let mut other = datum.clone();
    let m1 = datum.mass(0);
    if perturbation != 0.0 {
        if !(m1 > 0.0) {
            return Err(Error::config("population 1 has no mass to perturb"));
        }
        let scale = 1.0 + perturbation / m1;
        other.population_mut(0).mapv_inplace(|v| v * scale);
    }
    let report = stability_experiment(&model, &datum, &model, &other)?;
    let text = stability_csv(&report);
    let path = cfg.out_dir.join("stability.csv");
    write_text(&path, &text)?;
    let mut outcome = Outcome {
        summary: text.lines().map(str::to_string).collect(),
        files: vec![path],
        violations: Vec::new(),
    };
    for r in report.rows.iter().filter(|r| !r.dominated()) {
        outcome.violations.push(format!(
            "distance {} exceeds the stability bound at t = {}",
            r.distance, r.t
        ));
    }
    Ok(outcome)
}

/// Range check over a recorded run; used by the acceptance suite.
pub fn invariance(cfg: &RunConfig) -> Result<InvarianceReport> {
    let (model, datum) = cfg.build()?;
    let out = nlcrowd_core::run_recorded(&model, &datum, &mut ())?;
    check_invariance(out.trajectory.as_ref().expect("recorded"), model.r_max)
}
