//! Passive-scalar mixing on the unit torus: fields and norms, shear and
//! cellular flows, split and pseudo-spectral solvers, a Lagrangian Monte Carlo
//! oracle, mixing diagnostics, and a Keller-Segel suppression experiment,
//! driven by TOML configs that write CSV series, binary snapshots and JSON reports.

pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod field;
pub mod flows;
pub mod io;
pub mod keller_segel;
pub mod lagrangian;
pub mod solver;
pub mod spectral;

pub use diagnostics::{
    dissipated_fraction, dissipation_time, energy_balance_residual, fit_exponential,
    fit_power_law, hminus1_growth_ratio, DissipationTimeEstimate, FitKind, FitResult, Probe,
    TdisOptions, Window,
};
pub use error::{MixError, Result};
pub use experiments::{
    run_dissipation_time, run_scenario, run_simulate, validate_config, ExperimentConfig, Report,
    Scenario, Violation,
};
pub use field::{grad_l2, l2_norm, sobolev_norm, Grid, ScalarField, SobolevIndex};
pub use flows::{Axis, FlowSpec, ScheduleStep, ShearProfile, ShearSchedule};
pub use io::{load_field, load_series_csv, save_field};
pub use keller_segel::{ks_advance, KsConfig, KsRun, KsState};
pub use lagrangian::{feynman_kac_estimate, McConfig};
pub use solver::{
    advance_autonomous, advance_flow, advance_schedule, diffusion_step, exact_shear_step,
    Dealias, SeriesRecord, SolverConfig, Splitting, Trajectory,
};
