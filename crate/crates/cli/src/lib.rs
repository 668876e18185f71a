//! Presets, configuration files, output writers and the `nlcrowd` command.

pub mod cli;
pub mod commands;
pub mod config;
pub mod output;
pub mod presets;

pub use cli::{exit_code, run_cli, Cli, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VIOLATION};
pub use commands::{
    bounds_command, default_direction, gateaux_command, gateaux_table, invariance, run_command,
    stability_command, GateauxRow, Outcome,
};
pub use config::{
    parse_config, parse_config_str, DatumTerm, ExitSpec, PopulationConfig, RunConfig,
};
pub use output::{format_value, read_snapshot, snapshot_name, write_snapshot, Recorder, Snapshot};
pub use presets::{crossing, evacuation, preset, smooth, PRESETS};
