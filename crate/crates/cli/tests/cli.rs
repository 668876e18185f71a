use std::fs;
use std::path::Path;

use approx::assert_relative_eq;
use nlcrowd_cli::{
    crossing, evacuation, exit_code, format_value, gateaux_table, parse_config, parse_config_str,
    preset, read_snapshot, run_cli, smooth, snapshot_name, write_snapshot, DatumTerm, EXIT_CONFIG,
    EXIT_NUMERIC, EXIT_OK, EXIT_VIOLATION, PRESETS,
};
use nlcrowd_core::{make_grid, run, Error, Family, PopulationField, Rect};
use proptest::prelude::*;
use std::sync::Arc;

#[test]
fn presets_carry_the_experiment_parameters() {
    let c = crossing();
    assert_eq!(c.family, Family::Deviation);
    assert_eq!(c.populations[0].eps, vec![0.3, 0.7]);
    assert_eq!(c.populations[1].eps, vec![0.7, 0.3]);
    assert_eq!(c.populations[0].speed, vec![4.0, -4.0]);
    assert_eq!((c.delta_max, c.delta_r, c.mesh), (0.8, 0.75, 0.025));
    assert_eq!(c.bounds, Rect::new(-8.0, 8.0, -4.0, 4.0));

    let e = evacuation();
    assert_eq!(e.populations[1].direction, [0.0, 0.0]);
    assert_eq!(e.populations[0].eps, vec![0.0, 0.3]);
    for p in &e.populations {
        assert_eq!(
            p.datum,
            vec![DatumTerm::Box {
                value: 0.5,
                rect: Rect::new(-6.4, -3.2, -2.4, 2.4)
            }]
        );
    }
    assert_eq!(smooth().family, Family::Differentiable);
}

#[test]
fn unknown_preset_lists_valid_names() {
    let msg = preset("bogus").unwrap_err().to_string();
    for name in PRESETS {
        assert!(msg.contains(name), "{msg}");
    }
}

#[test]
fn config_file_naming_a_preset_equals_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    fs::write(&path, "# comment\npreset = crossing\n").unwrap();
    assert_eq!(parse_config(&path).unwrap(), crossing());
}

#[test]
fn config_overrides_mesh() {
    let cfg = parse_config_str("preset = crossing\n[grid]\nmesh = 0.1\n").unwrap();
    let g = cfg.grid().unwrap();
    assert_eq!((g.nx, g.ny), (160, 80));
}

#[test]
fn config_from_scratch() {
    let text = "\
[grid]
domain = -1 1 -1 1
mesh = 0.125
exits = none
[model]
family = differentiable
t_max = 0.1
[population.1]
speed = 1
direction = 1 0
datum = gauss 0.5 0 0 0.3; box 0.1 -0.5 0 -0.5 0.5
";
    let cfg = parse_config_str(text).unwrap();
    assert_eq!(cfg.n(), 1);
    assert_eq!(cfg.room, cfg.bounds);
    assert_eq!(cfg.populations[0].datum.len(), 2);
    let (model, datum) = cfg.build().unwrap();
    assert_eq!(model.family, Family::Differentiable);
    assert!(datum.total_mass() > 0.0);
}

#[test]
fn readme_config_example_parses() {
    let readme = include_str!("../../../README.md");
    let start = readme.find("### Config files").unwrap();
    let block = readme[start..].split("```").nth(1).unwrap();
    let body = block.strip_prefix("text").unwrap();
    let cfg = parse_config_str(body).unwrap();
    assert_eq!(cfg.mesh, 0.05);
    assert_eq!(cfg.snapshots.len(), 5);
    assert_eq!(cfg.populations[1], crossing().populations[1]);
}

#[test]
fn config_errors_name_the_line() {
    let cases = [
        (
            "preset = crossing\n[grid]\nmesh = 0.1\nmesh = 0.2\n",
            "line 4",
        ),
        ("preset = crossing\n[grid]\nspacing = 0.1\n", "line 3"),
        ("[nowhere]\n", "line 1"),
        ("mesh = 0.1\n", "line 1"),
        ("preset = crossing\n[population.4]\nspeed = 1\n", "line 3"),
        ("preset = crossing\n[model]\nfamily = other\n", "line 3"),
    ];
    for (text, line) in cases {
        let e = parse_config_str(text).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{text}");
        assert!(e.to_string().contains(line), "{text}: {e}");
    }
}

fn tiny(values: &[f64], nx: usize, ny: usize) -> PopulationField {
    let b = Rect::new(0.0, nx as f64, 0.0, ny as f64);
    let g = Arc::new(make_grid(b, 1.0, 1.0, b, Vec::new()).unwrap());
    let a = ndarray::Array2::from_shape_vec((nx, ny), values.to_vec()).unwrap();
    PopulationField::new(g, vec![a]).unwrap()
}

#[test]
fn zero_snapshot_text() {
    let dir = tempfile::tempdir().unwrap();
    let paths = write_snapshot(&tiny(&[0.0; 4], 2, 2), 0.0, dir.path()).unwrap();
    let text = fs::read_to_string(&paths[0]).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines, ["2,2,0,0,1,1,0", "0,0", "0,0"]);
}

#[test]
fn snapshot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let values = [0.1, 1.0 / 3.0, 2e-300, 0.7, 5.5e-7, 0.0];
    let state = tiny(&values, 3, 2);
    let paths = write_snapshot(&state, 0.25, dir.path()).unwrap();
    assert!(paths[0].ends_with(snapshot_name(0, 0.25)));
    let snap = read_snapshot(&paths[0]).unwrap();
    assert_eq!((snap.nx, snap.ny, snap.t), (3, 2, 0.25));
    assert_eq!(&snap.data, state.population(0));
}

#[test]
fn malformed_snapshot_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "2,2,0,0,1,1,0\n0,0\n0\n").unwrap();
    assert!(read_snapshot(&path).is_err());
}

fn dir_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn run_writes_snapshots_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("crossing");
    let code = run_cli(
        [
            "nlcrowd", "run", "--preset", "crossing", "--mesh", "0.1", "--tmax", "1", "--out",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain([out.display().to_string()]),
    );
    assert_eq!(code, EXIT_OK);
    let names = dir_files(&out);
    let snaps = names.iter().filter(|n| n.starts_with("pop1_")).count();
    assert!(snaps >= 2, "{names:?}");
    assert!(names.contains(&"diagnostics.csv".to_string()));
    assert!(names.contains(&"bounds.csv".to_string()));

    let t0 = read_snapshot(&out.join(snapshot_name(0, 0.0))).unwrap();
    assert_relative_eq!(t0.mass(), 0.9 * 3.2 * 4.8, epsilon = 1e-9);

    let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
    let header: Vec<&str> = diag.lines().next().unwrap().split(',').collect();
    assert_eq!(header[..4], ["t", "dt", "mass_1", "mass_2"]);
    let last: Vec<f64> = diag
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_relative_eq!(last[0], 1.0, epsilon = 1e-12);
    let total = last[2] + last[3] + last[last.len() - 2] + last[last.len() - 1];
    assert_relative_eq!(total, 0.9 * 15.36 + 0.7 * 15.36, max_relative = 1e-10);
}

#[test]
fn stability_with_zero_perturbation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_path_buf();
    let args = [
        "nlcrowd",
        "stability",
        "--preset",
        "crossing",
        "--mesh",
        "0.2",
        "--tmax",
        "0.2",
    ];
    let code = run_cli(args.iter().map(|s| s.to_string()).chain([
        "--perturbation".into(),
        "0".into(),
        "--out".into(),
        out.display().to_string(),
    ]));
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(out.join("stability.csv")).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!((cols[1], cols[2]), (0.0, 0.0), "{line}");
    }
}

#[test]
fn gateaux_sweep_shrinks() {
    let mut cfg = smooth();
    cfg.mesh = 0.125;
    cfg.t_max = 0.1;
    cfg.snapshots = vec![0.0, 0.1];
    let rows = gateaux_table(&cfg, &[0.2, 0.1, 0.05]).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].ratio_to_previous.is_none());
    for w in rows.windows(2) {
        assert!(w[1].residual < w[0].residual);
    }
}

#[test]
fn gateaux_on_the_deviation_family_fails() {
    let dir = tempfile::tempdir().unwrap();
    let code = run_cli(
        [
            "nlcrowd", "gateaux", "--preset", "crossing", "--mesh", "0.2", "--tmax", "0.1", "--out",
        ]
        .iter()
        .map(|s| s.to_string())
        .chain([dir.path().display().to_string()]),
    );
    assert_ne!(code, EXIT_OK);
}

#[test]
fn exit_codes() {
    assert_eq!(run_cli(["nlcrowd", "run"]), EXIT_CONFIG);
    assert_eq!(
        run_cli(["nlcrowd", "run", "--preset", "bogus"]),
        EXIT_CONFIG
    );
    assert_eq!(run_cli(["nlcrowd", "frobnicate"]), EXIT_CONFIG);
    assert_eq!(
        run_cli(["nlcrowd", "run", "--preset", "crossing", "--mesh=-1"]),
        EXIT_CONFIG
    );
    assert_eq!(exit_code(&Error::Numeric("x".into())), EXIT_NUMERIC);
    assert_eq!(
        exit_code(&Error::InvariantViolation {
            t: 0.0,
            population: 0,
            min: -1.0,
            max: 0.0,
            bound: 1.0
        }),
        EXIT_VIOLATION
    );
}

#[test]
fn evacuation_front_has_finite_speed() {
    let mut cfg = evacuation();
    cfg.mesh = 0.1;
    cfg.t_max = 0.5;
    cfg.snapshots.clear();
    let (model, datum) = cfg.build().unwrap();
    let out = run(&model, &datum, &mut ()).unwrap();
    let g = out.state.grid();
    // nothing has reached cells more than the maximal speed times t plus
    // the kernel reach ahead of the initial front
    let reach = -3.2 + (4.0 + 0.8 + 0.3) * 0.5 + 0.5 + 1.0;
    for pop in 0..2 {
        for ((i, _), v) in out.state.population(pop).indexed_iter() {
            if g.x_center(i) > reach + 3.0 {
                assert!(*v < 1e-6, "population {pop} at x = {}: {v}", g.x_center(i));
            }
        }
    }
    assert!(out.escaped.iter().all(|e| *e < 1e-12));
}

proptest! {
    #[test]
    fn format_value_round_trips(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
        let s = format_value(v);
        let back: f64 = s.parse().unwrap();
        prop_assert_eq!(back.to_bits() == v.to_bits() || (v == 0.0 && back == 0.0), true, "{} -> {}", v, s);
    }
}
