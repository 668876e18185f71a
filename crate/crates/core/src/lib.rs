//! Nonlocal conservation laws for several interacting crowd populations.

pub mod error;
pub mod grid;
pub mod kernel;

pub use error::{Error, Result};
pub use grid::{
    indicator_datum, make_grid, norms, GridSpec, NormRecord, PopulationField, Rect, Segment, Side,
    VectorField,
};
pub use kernel::{
    convolve, convolve_gradient, sample_kernel, AxisProfile, KernelSpec, SampledKernel,
};
pub mod nonlocal;
pub mod velocity;

pub use nonlocal::{
    estimate_ci, flux_push, gradient_avoidance, saturate, CiEstimate, NonlocalOp, Weight,
};
pub use velocity::{
    assemble_deviation, assemble_differentiable, discomfort, felt_density, transport_deviation,
    DirectionField, SpeedLaw, SpeedNorms, VelocityField,
};
pub mod linearized;
pub mod solver;

pub use linearized::{
    cost_and_gradient, gateaux_residual, linearized_velocity, solve_linearized, CostSpec,
    GateauxProbe,
};
pub use solver::{
    apply_boundary, cfl_dt, run, run_recorded, run_with_dts, split_step, split_step_frozen, Family,
    ModelSpec, Observer, RunOutput, Splitting, StepReport, Trajectory, INVARIANT_TOL,
};
pub mod analysis;

pub use analysis::{
    bounds_at, bounds_differentiable, check_invariance, direction_norms, gather_inputs, kappa0,
    kernel_norms, population_inputs, stability_bound_deviation, stability_bound_differentiable,
    stability_experiment, tv_bound_deviation, wd, BoundInputs, BoundReport, BoundRow, BoundTracker,
    DifferentiableDeltas, InvarianceReport, LogBound, StabilityDeltas, StabilityReport,
    StabilityRow,
};
