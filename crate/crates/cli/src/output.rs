//! Snapshot and diagnostics files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use nlcrowd_core::{
    bounds_at, norms, population_inputs, BoundReport, BoundTracker, Error, ModelSpec, Observer,
    PopulationField, Result, RunOutput, StabilityReport, StepReport, VelocityField,
};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest text that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.is_finite() && (1e-5..1e16).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(format_value)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn snapshot_name(population: usize, t: f64) -> String {
    format!("pop{}_t{t:.3}.csv", population + 1)
}

/// Writes one CSV per population: a line `nx,ny,x0,y0,dx,dy,t` with the
/// values, then `ny` rows of `nx` densities with `y` increasing.
pub fn write_snapshot(state: &PopulationField, t: f64, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let g = state.grid();
    let header = format!(
        "{},{},{},{},{},{},{}\n",
        g.nx,
        g.ny,
        format_value(g.x0),
        format_value(g.y0),
        format_value(g.dx),
        format_value(g.dy),
        format_value(t)
    );
    let mut paths = Vec::with_capacity(state.n());
    for (i, rho) in state.populations().iter().enumerate() {
        let mut text = header.clone();
        for j in 0..g.ny {
            text.push_str(&join(rho.column(j).iter().copied()));
            text.push('\n');
        }
        let path = dir.join(snapshot_name(i, t));
        fs::write(&path, text).map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
    pub t: f64,
    /// Indexed `[i, j]` like the solver arrays.
    pub data: Array2<f64>,
}

impl Snapshot {
    pub fn mass(&self) -> f64 {
        self.data.sum() * self.dx * self.dy
    }
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |msg: String| Error::config(format!("{}: {msg}", path.display()));
    let mut lines = text.lines();
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split(',')
        .collect();
    if head.len() != 7 {
        return Err(bad(format!("header has {} fields, expected 7", head.len())));
    }
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad(format!("bad integer '{s}'")))
    };
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| bad(format!("bad number '{s}'")))
    };
    let (nx, ny) = (int(head[0])?, int(head[1])?);
    let mut data = Array2::zeros((nx, ny));
    for j in 0..ny {
        let row = lines
            .next()
            .ok_or_else(|| bad(format!("missing row {j}")))?;
        let vals: Vec<&str> = row.split(',').collect();
        if vals.len() != nx {
            return Err(bad(format!(
                "row {j} has {} values, expected {nx}",
                vals.len()
            )));
        }
        for (i, v) in vals.iter().enumerate() {
            data[[i, j]] = num(v)?;
        }
    }
    Ok(Snapshot {
        nx,
        ny,
        x0: num(head[2])?,
        y0: num(head[3])?,
        dx: num(head[4])?,
        dy: num(head[5])?,
        t: num(head[6])?,
        data,
    })
}

#[derive(Clone, Debug, PartialEq)]
struct DiagRow {
    t: f64,
    dt: f64,
    mass: Vec<f64>,
    linf: Vec<f64>,
    tv: Vec<f64>,
    escaped: Vec<f64>,
    grad_v: f64,
}

/// Observer writing snapshots as they are reached and collecting
/// diagnostics rows every `cadence` steps.
pub struct Recorder {
    cadence: usize,
    dir: Option<PathBuf>,
    rows: Vec<DiagRow>,
    escaped: Vec<f64>,
    pub tracker: BoundTracker,
    pub files: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(datum: &PopulationField, cadence: usize, dir: Option<PathBuf>) -> Result<Self> {
        let rec = norms(datum)?;
        let n = datum.n();
        Ok(Recorder {
            cadence: cadence.max(1),
            dir,
            rows: vec![DiagRow {
                t: 0.0,
                dt: 0.0,
                mass: (0..n).map(|i| datum.mass(i)).collect(),
                linf: rec.linf,
                tv: rec.tv,
                escaped: vec![0.0; n],
                grad_v: 0.0,
            }],
            escaped: vec![0.0; n],
            tracker: BoundTracker::new(),
            files: Vec::new(),
        })
    }

    fn push(&mut self, r: &StepReport, state: &PopulationField) -> Result<()> {
        let rec = norms(state)?;
        self.rows.push(DiagRow {
            t: r.t,
            dt: r.dt,
            mass: r.mass.clone(),
            linf: rec.linf,
            tv: rec.tv,
            escaped: self.escaped.clone(),
            grad_v: self.tracker.running_grad_v(),
        });
        Ok(())
    }

    /// Adds the final step if the cadence skipped it.
    pub fn close(&mut self, out: &RunOutput) -> Result<()> {
        if let Some(last) = out.reports.last() {
            if !last.step.is_multiple_of(self.cadence) {
                self.push(last, &out.state)?;
            }
        }
        Ok(())
    }

    /// `diagnostics.csv` text with TV bounds evaluated from the recorded
    /// states.
    pub fn diagnostics_csv(&self, model: &ModelSpec, datum: &PopulationField) -> Result<String> {
        let n = model.n();
        let c_i = self.tracker.ci_per_population(model, datum)?;
        let inputs = population_inputs(model, datum, &c_i)?;
        let mut text = String::from("t,dt");
        for name in ["mass", "linf", "tv", "tv_bound", "escaped"] {
            for i in 1..=n {
                let _ = write!(text, ",{name}_{i}");
            }
        }
        text.push('\n');
        for r in &self.rows {
            let (tv_bound, _) = bounds_at(model.family, &inputs, r.t, r.grad_v);
            let cols = [r.t, r.dt]
                .into_iter()
                .chain(r.mass.iter().copied())
                .chain(r.linf.iter().copied())
                .chain(r.tv.iter().copied())
                .chain(tv_bound)
                .chain(r.escaped.iter().copied());
            text.push_str(&join(cols));
            text.push('\n');
        }
        Ok(text)
    }
}

impl Observer for Recorder {
    fn on_step(
        &mut self,
        r: &StepReport,
        state: &PopulationField,
        transport: &VelocityField,
    ) -> Result<()> {
        self.tracker.on_step(r, state, transport)?;
        for (e, o) in self.escaped.iter_mut().zip(&r.outflow) {
            *e += o;
        }
        if r.step.is_multiple_of(self.cadence) {
            self.push(r, state)?;
        }
        Ok(())
    }

    fn on_snapshot(&mut self, t: f64, state: &PopulationField) -> Result<()> {
        self.tracker.on_snapshot(t, state)?;
        if let Some(dir) = &self.dir {
            let paths = write_snapshot(state, t, dir)?;
            self.files.extend(paths);
        }
        Ok(())
    }
}

pub fn bounds_csv(report: &BoundReport) -> String {
    let n = report.rows.first().map_or(0, |r| r.tv.len());
    let mut text = String::from("t");
    for name in ["tv", "tv_bound", "linf", "linf_bound", "slack"] {
        for i in 1..=n {
            let _ = write!(text, ",{name}_{i}");
        }
    }
    text.push_str(",grad_v,c_i\n");
    for r in &report.rows {
        let linf_bound = r.linf_bound.clone().unwrap_or_else(|| vec![f64::NAN; n]);
        let slack =
            r.tv.iter()
                .zip(&r.tv_bound)
                .map(|(m, b)| if *m > 0.0 { b / m } else { f64::INFINITY });
        let cols = std::iter::once(r.t)
            .chain(r.tv.iter().copied())
            .chain(r.tv_bound.iter().copied())
            .chain(r.linf.iter().copied())
            .chain(linf_bound)
            .chain(slack)
            .chain([r.grad_v_inf, report.c_i_lower_bound.unwrap_or(f64::NAN)]);
        text.push_str(&join(cols));
        text.push('\n');
    }
    text
}

pub fn stability_csv(report: &StabilityReport) -> String {
    let mut text = String::from("t,distance,bound,log10_bound,log10_slack\n");
    for r in &report.rows {
        text.push_str(&join([
            r.t,
            r.distance,
            r.bound.value(),
            r.bound.log10(),
            r.bound.log10_slack(r.distance),
        ]));
        text.push('\n');
    }
    text
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}
