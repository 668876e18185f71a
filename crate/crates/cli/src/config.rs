//! Run configuration and its sectioned `key = value` file format.
//!
//! ```text
//! preset = crossing
//!
//! [grid]
//! mesh = 0.1
//!
//! [population.1]
//! eps = 0.3, 0.7
//! datum = box 0.9 -6.4 -3.2 -2.4 2.4
//! ```
//!
//! Sections: `[grid]`, `[model]`, `[kernel]`, `[population.i]` (1-based),
//! `[output]`. Keys before the first section: `preset`. Lines starting with
//! `#` are comments.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nlcrowd_core::{
    indicator_datum, make_grid, sample_kernel, AxisProfile, DirectionField, Error, Family,
    GridSpec, KernelSpec, ModelSpec, NonlocalOp, PopulationField, Rect, Result, Segment, Side,
    SpeedLaw, Splitting,
};

use crate::presets::preset;

/// One additive term of an initial datum.
#[derive(Clone, Debug, PartialEq)]
pub enum DatumTerm {
    /// `value · 1_rect`, averaged exactly over cells.
    Box { value: f64, rect: Rect },
    /// `amp · exp(−((x − cx)² + (y − cy)²) / width²)`
    Gauss {
        amp: f64,
        cx: f64,
        cy: f64,
        width: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopulationConfig {
    /// Coefficients of `v(ρ)` in increasing degree.
    pub speed: Vec<f64>,
    /// Geodesic direction `g`.
    pub direction: [f64; 2],
    /// Add the wall discomfort field and restrict `g` to the room.
    pub discomfort: bool,
    /// Avoidance weights `ε_ij` against every population (deviation family).
    pub eps: Vec<f64>,
    pub datum: Vec<DatumTerm>,
}

/// Exit segment given by the domain side and its extent along that side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitSpec {
    pub side: Side,
    pub from: f64,
    pub to: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub family: Family,
    pub bounds: Rect,
    pub mesh: f64,
    pub room: Rect,
    pub exits: Vec<ExitSpec>,
    pub r_max: f64,
    pub cfl: f64,
    pub t_max: f64,
    pub splitting: Splitting,
    pub strict: bool,
    pub delta_max: f64,
    pub delta_r: f64,
    pub kernel_half_width: [f64; 2],
    pub normalize_kernel: bool,
    pub populations: Vec<PopulationConfig>,
    pub out_dir: PathBuf,
    pub snapshots: Vec<f64>,
    /// Diagnostics row every `cadence` steps.
    pub cadence: usize,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// Empty configuration for explicit files; geometry and populations
    /// must be supplied.
    fn blank() -> Self {
        RunConfig {
            preset: None,
            family: Family::Deviation,
            bounds: Rect::new(0.0, 0.0, 0.0, 0.0),
            mesh: 0.0,
            room: Rect::new(0.0, 0.0, 0.0, 0.0),
            exits: Vec::new(),
            r_max: 1.0,
            cfl: 0.9,
            t_max: 1.0,
            splitting: Splitting::Godunov,
            strict: false,
            delta_max: 0.0,
            delta_r: 0.0,
            kernel_half_width: [0.5, 0.5],
            normalize_kernel: false,
            populations: Vec::new(),
            out_dir: PathBuf::from("out"),
            snapshots: Vec::new(),
            cadence: 10,
            threads: None,
        }
    }

    pub fn n(&self) -> usize {
        self.populations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.populations.is_empty() {
            return Err(Error::config("no populations configured"));
        }
        if self.bounds.is_empty() {
            return Err(Error::config("[grid] domain is missing or empty"));
        }
        if !(self.mesh > 0.0) {
            return Err(Error::config("[grid] mesh must be positive"));
        }
        if self.cadence == 0 {
            return Err(Error::config("[output] cadence must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("[output] threads must be at least 1"));
        }
        if !(self.t_max > 0.0) || !self.t_max.is_finite() {
            return Err(Error::config(format!(
                "[model] t_max must be positive, got {}",
                self.t_max
            )));
        }
        if let Some(t) = self
            .snapshots
            .iter()
            .find(|t| !(0.0..=self.t_max).contains(*t))
        {
            return Err(Error::config(format!(
                "[output] snapshots: time {t} outside [0, {}]",
                self.t_max
            )));
        }
        for (i, p) in self.populations.iter().enumerate() {
            if p.speed.is_empty() {
                return Err(Error::config(format!(
                    "[population.{}] speed is missing",
                    i + 1
                )));
            }
            if self.family == Family::Deviation && p.eps.len() != self.n() {
                return Err(Error::config(format!(
                    "[population.{}] eps: {} weights for {} populations",
                    i + 1,
                    p.eps.len(),
                    self.n()
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let b = self.bounds;
        let exits = self
            .exits
            .iter()
            .map(|e| match e.side {
                Side::West => Segment::vertical(b.x_min, e.from, e.to),
                Side::East => Segment::vertical(b.x_max, e.from, e.to),
                Side::South => Segment::horizontal(b.y_min, e.from, e.to),
                Side::North => Segment::horizontal(b.y_max, e.from, e.to),
            })
            .collect();
        make_grid(b, self.mesh, self.mesh, self.room, exits)
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec {
            x: AxisProfile::bump(self.kernel_half_width[0]),
            y: AxisProfile::bump(self.kernel_half_width[1]),
            normalize: self.normalize_kernel,
        }
    }

    /// Model and initial datum.
    pub fn build(&self) -> Result<(ModelSpec, PopulationField)> {
        self.validate()?;
        let grid = Arc::new(self.grid()?);
        let kernel = Arc::new(sample_kernel(&self.kernel_spec(), &grid)?);
        let mut laws = Vec::with_capacity(self.n());
        let mut dirs = Vec::with_capacity(self.n());
        let mut data = Vec::with_capacity(self.n());
        for p in &self.populations {
            laws.push(SpeedLaw::polynomial(p.speed.clone(), self.r_max)?);
            dirs.push(if p.discomfort {
                DirectionField::corridor(&grid, p.direction, self.delta_max, self.delta_r)?
            } else {
                DirectionField::uniform(&grid, p.direction)
            });
            let mut rho = grid.zeros();
            for term in &p.datum {
                match *term {
                    DatumTerm::Box { value, rect } => rho += &indicator_datum(&grid, value, rect)?,
                    DatumTerm::Gauss { amp, cx, cy, width } => {
                        rho += &grid.sample(|x, y| {
                            amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (width * width)).exp()
                        })
                    }
                }
            }
            data.push(rho);
        }
        let mut model = match self.family {
            Family::Deviation => {
                let ops = self
                    .populations
                    .iter()
                    .map(|p| {
                        NonlocalOp::sum(
                            p.eps
                                .iter()
                                .enumerate()
                                .filter(|(_, e)| **e != 0.0)
                                .map(|(j, &e)| NonlocalOp::gradient_avoidance(e, j, kernel.clone()))
                                .collect(),
                        )
                    })
                    .collect();
                ModelSpec::deviation(grid.clone(), laws, dirs, ops)
            }
            Family::Differentiable => {
                ModelSpec::differentiable(grid.clone(), laws, dirs, vec![kernel; self.n()])
            }
        };
        model.r_max = self.r_max;
        model.cfl = self.cfl;
        model.t_max = self.t_max;
        model.snapshots = self.snapshots.clone();
        model.splitting = self.splitting;
        model.strict = self.strict;
        model.validate()?;
        let datum = PopulationField::new(grid, data)?;
        Ok((model, datum))
    }
}

fn numbers(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::config(format!("{key}: '{s}' is not a number")))
        })
        .collect()
}

fn fixed<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let v = numbers(key, value)?;
    v.try_into().map_err(|v: Vec<f64>| {
        Error::config(format!("{key}: expected {N} numbers, got {}", v.len()))
    })
}

fn number(key: &str, value: &str) -> Result<f64> {
    Ok(fixed::<1>(key, value)?[0])
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::config(format!(
            "{key}: expected true or false, got '{value}'"
        ))),
    }
}

fn rect(key: &str, value: &str) -> Result<Rect> {
    let [a, b, c, d] = fixed::<4>(key, value)?;
    Ok(Rect::new(a, b, c, d))
}

fn exits(key: &str, value: &str) -> Result<Vec<ExitSpec>> {
    if value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let mut parts = item.split_whitespace();
            let side = match parts.next() {
                Some("west") => Side::West,
                Some("east") => Side::East,
                Some("south") => Side::South,
                Some("north") => Side::North,
                other => {
                    return Err(Error::config(format!(
                        "{key}: unknown side {other:?}, expected west, east, south or north"
                    )))
                }
            };
            let [from, to] = fixed::<2>(key, &parts.collect::<Vec<_>>().join(" "))?;
            Ok(ExitSpec { side, from, to })
        })
        .collect()
}

fn datum(key: &str, value: &str) -> Result<Vec<DatumTerm>> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (kind, rest) = item.split_once(char::is_whitespace).unwrap_or((item, ""));
            match kind {
                "box" => {
                    let [value, x0, x1, y0, y1] = fixed::<5>(key, rest)?;
                    Ok(DatumTerm::Box {
                        value,
                        rect: Rect::new(x0, x1, y0, y1),
                    })
                }
                "gauss" => {
                    let [amp, cx, cy, width] = fixed::<4>(key, rest)?;
                    Ok(DatumTerm::Gauss { amp, cx, cy, width })
                }
                _ => Err(Error::config(format!(
                    "{key}: unknown datum term '{kind}', expected box or gauss"
                ))),
            }
        })
        .collect()
}

fn blank_population(n: usize) -> PopulationConfig {
    PopulationConfig {
        speed: Vec::new(),
        direction: [0.0, 0.0],
        discomfort: false,
        eps: vec![0.0; n],
        datum: Vec::new(),
    }
}

fn apply(cfg: &mut RunConfig, section: &str, key: &str, value: &str) -> Result<()> {
    let name = format!("[{section}] {key}");
    let k = name.as_str();
    match (section, key) {
        ("grid", "domain") => cfg.bounds = rect(k, value)?,
        ("grid", "mesh") => cfg.mesh = number(k, value)?,
        ("grid", "room") => cfg.room = rect(k, value)?,
        ("grid", "exits") => cfg.exits = exits(k, value)?,
        ("model", "family") => {
            cfg.family = match value {
                "deviation" => Family::Deviation,
                "differentiable" => Family::Differentiable,
                _ => {
                    return Err(Error::config(format!(
                        "{k}: expected deviation or differentiable"
                    )))
                }
            }
        }
        ("model", "r_max") => cfg.r_max = number(k, value)?,
        ("model", "cfl") => cfg.cfl = number(k, value)?,
        ("model", "t_max") => cfg.t_max = number(k, value)?,
        ("model", "splitting") => {
            cfg.splitting = match value {
                "godunov" => Splitting::Godunov,
                "strang" => Splitting::Strang,
                _ => return Err(Error::config(format!("{k}: expected godunov or strang"))),
            }
        }
        ("model", "strict") => cfg.strict = boolean(k, value)?,
        ("model", "delta_max") => cfg.delta_max = number(k, value)?,
        ("model", "delta_r") => cfg.delta_r = number(k, value)?,
        ("kernel", "half_width") => {
            let v = numbers(k, value)?;
            cfg.kernel_half_width = match v[..] {
                [h] => [h, h],
                [hx, hy] => [hx, hy],
                _ => return Err(Error::config(format!("{k}: expected 1 or 2 numbers"))),
            }
        }
        ("kernel", "normalize") => cfg.normalize_kernel = boolean(k, value)?,
        ("output", "dir") => cfg.out_dir = PathBuf::from(value),
        ("output", "snapshots") => cfg.snapshots = numbers(k, value)?,
        ("output", "cadence") => {
            cfg.cadence = value
                .parse()
                .map_err(|_| Error::config(format!("{k}: expected a positive integer")))?
        }
        ("output", "threads") => {
            cfg.threads = Some(
                value
                    .parse()
                    .map_err(|_| Error::config(format!("{k}: expected a positive integer")))?,
            )
        }
        _ => {
            let Some(idx) = section.strip_prefix("population.") else {
                return Err(Error::config(format!("unknown key {k}")));
            };
            let i: usize = idx
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| Error::config(format!("bad population index in [{section}]")))?;
            if i > cfg.populations.len() + 1 {
                return Err(Error::config(format!(
                    "[{section}] skips population {}; sections must be consecutive",
                    cfg.populations.len() + 1
                )));
            }
            if i == cfg.populations.len() + 1 {
                let n = cfg.populations.len();
                cfg.populations.push(blank_population(n + 1));
            }
            let p = &mut cfg.populations[i - 1];
            match key {
                "speed" => p.speed = numbers(k, value)?,
                "direction" => p.direction = fixed::<2>(k, value)?,
                "discomfort" => p.discomfort = boolean(k, value)?,
                "eps" => p.eps = numbers(k, value)?,
                "datum" => p.datum = datum(k, value)?,
                _ => return Err(Error::config(format!("unknown key {k}"))),
            }
        }
    }
    Ok(())
}

/// Parses configuration text. A `preset` line seeds the configuration and
/// later keys override it one by one.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut entries: Vec<(usize, String, String, String)> = Vec::new();
    let mut seen = HashSet::new();
    let mut section = String::new();
    let mut preset_name = None;
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[') {
            let Some(name) = inner.strip_suffix(']') else {
                return Err(Error::config(format!(
                    "line {line_no}: unterminated section header"
                )));
            };
            section = name.trim().to_string();
            let known = matches!(section.as_str(), "grid" | "model" | "kernel" | "output")
                || section.starts_with("population.");
            if !known {
                return Err(Error::config(format!(
                    "line {line_no}: unknown section [{section}]"
                )));
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!(
                "line {line_no}: expected key = value"
            )));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if !seen.insert((section.clone(), key.clone())) {
            return Err(Error::config(format!(
                "line {line_no}: duplicate key '{key}'"
            )));
        }
        if section.is_empty() {
            if key != "preset" {
                return Err(Error::config(format!(
                    "line {line_no}: unknown top-level key '{key}'"
                )));
            }
            preset_name = Some(value);
            continue;
        }
        entries.push((line_no, section.clone(), key, value));
    }
    let mut cfg = match &preset_name {
        Some(name) => preset(name)?,
        None => RunConfig::blank(),
    };
    // population sections in index order so new ones append consecutively
    entries.sort_by_key(|(line, s, _, _)| {
        let pop = s
            .strip_prefix("population.")
            .and_then(|i| i.parse::<usize>().ok())
            .unwrap_or(0);
        (pop, *line)
    });
    for (line_no, section, key, value) in &entries {
        apply(&mut cfg, section, key, value).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("line {line_no}: {msg}")),
            other => other,
        })?;
    }
    if preset_name.is_none() && cfg.room.is_empty() {
        cfg.room = cfg.bounds;
    }
    if cfg.family == Family::Deviation {
        let n = cfg.n();
        for p in &mut cfg.populations {
            if p.eps.len() < n && p.eps.iter().all(|e| *e == 0.0) {
                p.eps.resize(n, 0.0);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}
