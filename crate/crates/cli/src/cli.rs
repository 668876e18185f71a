//! Argument parsing and exit codes.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use log::{error, warn};
use nlcrowd_core::{Error, Result};

use crate::commands::{bounds_command, gateaux_command, run_command, stability_command, Outcome};
use crate::config::{parse_config, RunConfig};
use crate::presets::preset;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "nlcrowd",
    version,
    about = "Nonlocal multi-population crowd dynamics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate and write snapshots, diagnostics.csv and bounds.csv.
    Run(Common),
    /// Simulate and print the a-priori bounds next to the measured norms.
    Bounds(Common),
    /// Gateaux remainder r(h) over an h sweep (differentiable family).
    Gateaux {
        #[command(flatten)]
        common: Common,
        /// Comma-separated step sizes, largest first.
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.1,0.05,0.025")]
        h: Vec<f64>,
    },
    /// Paired runs against the stability bound (deviation family).
    Stability {
        #[command(flatten)]
        common: Common,
        /// L1 size of the perturbation of population 1.
        #[arg(long, default_value_t = 0.1)]
        perturbation: f64,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Built-in configuration: crossing, evacuation or smooth.
    #[arg(long)]
    pub preset: Option<String>,
    /// Configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cell size (dx = dy).
    #[arg(long)]
    pub mesh: Option<f64>,
    /// Final time.
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub cfl: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Abort on maximum principle or bound violations (exit code 3).
    #[arg(long)]
    pub strict: bool,
    /// Rescale the sampled kernel to unit discrete mass.
    #[arg(long)]
    pub normalize_kernel: bool,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(_), Some(_)) => {
                return Err(Error::config("give either --preset or --config, not both"))
            }
            (Some(name), None) => preset(name)?,
            (None, Some(path)) => parse_config(path)?,
            (None, None) => return Err(Error::config("one of --preset or --config is required")),
        };
        if let Some(m) = self.mesh {
            cfg.mesh = m;
        }
        if let Some(t) = self.tmax {
            cfg.t_max = t;
            cfg.snapshots.retain(|s| *s <= t);
            if !cfg.snapshots.contains(&t) {
                cfg.snapshots.push(t);
            }
        }
        if let Some(c) = self.cfl {
            cfg.cfl = c;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        cfg.strict |= self.strict;
        cfg.normalize_kernel |= self.normalize_kernel;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvariantViolation { .. } => EXIT_VIOLATION,
        Error::Numeric(_) | Error::NonFinite { .. } | Error::Estimation(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn configure_threads(n: Option<usize>) {
    if let Some(n) = n {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            warn!("thread pool already initialised: {e}");
        }
    }
}

type Action = Box<dyn Fn(&RunConfig) -> Result<Outcome>>;

fn execute(cmd: &Command) -> Result<(Outcome, bool)> {
    let (common, action): (&Common, Action) = match cmd {
        Command::Run(c) => (c, Box::new(run_command)),
        Command::Bounds(c) => (c, Box::new(bounds_command)),
        Command::Gateaux { common, h } => {
            let h = h.clone();
            (common, Box::new(move |cfg| gateaux_command(cfg, &h)))
        }
        Command::Stability {
            common,
            perturbation,
        } => {
            let p = *perturbation;
            (common, Box::new(move |cfg| stability_command(cfg, p)))
        }
    };
    let cfg = common.resolve()?;
    configure_threads(cfg.threads);
    Ok((action(&cfg)?, cfg.strict))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok((outcome, strict)) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            for v in &outcome.violations {
                warn!("{v}");
            }
            if strict && !outcome.violations.is_empty() {
                EXIT_VIOLATION
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
