//! Built-in experiment configurations.

use std::path::PathBuf;

use nlcrowd_core::{Error, Family, Rect, Result, Side, Splitting};

use crate::config::{DatumTerm, ExitSpec, PopulationConfig, RunConfig};

pub const PRESETS: [&str; 3] = ["crossing", "evacuation", "smooth"];

fn corridor(name: &str) -> RunConfig {
    RunConfig {
        preset: Some(name.to_string()),
        family: Family::Deviation,
        bounds: Rect::new(-8.0, 8.0, -4.0, 4.0),
        mesh: 0.025,
        room: Rect::new(-8.0, 8.0, -3.0, 3.0),
        exits: vec![
            ExitSpec {
                side: Side::West,
                from: -3.0,
                to: 3.0,
            },
            ExitSpec {
                side: Side::East,
                from: -3.0,
                to: 3.0,
            },
        ],
        r_max: 1.0,
        cfl: 0.9,
        t_max: 4.0,
        splitting: Splitting::Godunov,
        strict: false,
        delta_max: 0.8,
        delta_r: 0.75,
        kernel_half_width: [0.5, 0.5],
        normalize_kernel: false,
        populations: Vec::new(),
        out_dir: PathBuf::from("out").join(name),
        snapshots: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        cadence: 10,
        threads: None,
    }
}

fn walker(direction: [f64; 2], eps: [f64; 2], value: f64, x0: f64, x1: f64) -> PopulationConfig {
    PopulationConfig {
        speed: vec![4.0, -4.0],
        direction,
        discomfort: true,
        eps: eps.to_vec(),
        datum: vec![DatumTerm::Box {
            value,
            rect: Rect::new(x0, x1, -2.4, 2.4),
        }],
    }
}

/// Two groups walking towards each other along the corridor.
pub fn crossing() -> RunConfig {
    let mut cfg = corridor("crossing");
    cfg.populations = vec![
        walker([1.0, 0.0], [0.3, 0.7], 0.9, -6.4, -3.2),
        walker([-1.0, 0.0], [0.7, 0.3], 0.7, 3.2, 6.4),
    ];
    cfg
}

/// One group heads for the right exit, the other only makes way.
pub fn evacuation() -> RunConfig {
    let mut cfg = corridor("evacuation");
    cfg.populations = vec![
        walker([1.0, 0.0], [0.0, 0.3], 0.5, -6.4, -3.2),
        walker([0.0, 0.0], [0.3, 0.0], 0.5, -6.4, -3.2),
    ];
    cfg
}

/// Differentiable model with smooth data on a closed 64×64 square.
pub fn smooth() -> RunConfig {
    let gauss = |amp, cx, cy| DatumTerm::Gauss {
        amp,
        cx,
        cy,
        width: 0.6,
    };
    RunConfig {
        preset: Some("smooth".into()),
        family: Family::Differentiable,
        bounds: Rect::new(-2.0, 2.0, -2.0, 2.0),
        mesh: 4.0 / 64.0,
        room: Rect::new(-2.0, 2.0, -2.0, 2.0),
        exits: Vec::new(),
        r_max: 1.0,
        cfl: 0.9,
        t_max: 0.2,
        splitting: Splitting::Godunov,
        strict: false,
        delta_max: 0.0,
        delta_r: 0.0,
        kernel_half_width: [0.5, 0.5],
        normalize_kernel: false,
        populations: vec![
            PopulationConfig {
                speed: vec![1.0, -1.0],
                direction: [1.0, 0.0],
                discomfort: false,
                eps: Vec::new(),
                datum: vec![gauss(0.5, -0.6, 0.0)],
            },
            PopulationConfig {
                speed: vec![1.0, -1.0],
                direction: [-1.0, 0.0],
                discomfort: false,
                eps: Vec::new(),
                datum: vec![gauss(0.4, 0.6, 0.2)],
            },
        ],
        out_dir: PathBuf::from("out").join("smooth"),
        snapshots: vec![0.0, 0.1, 0.2],
        cadence: 10,
        threads: None,
    }
}

pub fn preset(name: &str) -> Result<RunConfig> {
    match name {
        "crossing" => Ok(crossing()),
        "evacuation" => Ok(evacuation()),
        "smooth" => Ok(smooth()),
        _ => Err(Error::config(format!(
            "unknown preset '{name}', valid presets: {}",
            PRESETS.join(", ")
        ))),
    }
}
