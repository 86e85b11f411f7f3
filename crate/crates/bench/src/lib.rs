//! Fixtures shared by the kernel benchmarks.

use mixlab_core::flows::pierrehumbert_schedule;
use mixlab_core::{Grid, ScalarField, ShearSchedule, SolverConfig};

pub const SIZES: [usize; 3] = [128, 256, 512];

pub fn grid(n: usize) -> Grid {
    Grid::new(n).expect("bench sizes are valid")
}

/// Unit-norm band-limited field, fixed seed.
pub fn field(n: usize) -> ScalarField {
    ScalarField::random_band_limited(grid(n), 7, 8).expect("band fits")
}

/// `steps` Pierrehumbert shears of unit duration.
pub fn schedule(steps: usize) -> ShearSchedule {
    pierrehumbert_schedule(1.0, 1, 1.0, steps).expect("valid schedule")
}

pub fn solver(n: usize, kappa: f64, dt: f64) -> SolverConfig {
    SolverConfig::new(grid(n), kappa, dt).expect("valid solver config")
}
