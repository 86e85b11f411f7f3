//! Monte Carlo Feynman–Kac oracle: `rho(t, x) = E[rho0(Y_0)]` where `Y` runs
//! the noisy characteristics backward from `(t, x)`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::field::ScalarField;
use crate::flows::{Axis, ShearSchedule};
use crate::spectral::{freq, C64};

pub const MIN_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub sde_dt: f64,
    pub seed: u64,
}

impl McConfig {
    /// Default sub-step `tau/32` for a schedule with shortest step `tau`.
    pub fn for_schedule(schedule: &ShearSchedule, n_paths: usize, seed: u64) -> Self {
        McConfig {
            n_paths,
            sde_dt: schedule.min_duration() / 32.0,
            seed,
        }
    }

    pub fn validate(&self, schedule: &ShearSchedule) -> Result<()> {
        if self.n_paths < MIN_PATHS {
            return Err(MixError::InvalidParameter(format!(
                "n_paths = {} below the minimum {MIN_PATHS}",
                self.n_paths
            )));
        }
        let tau = schedule.min_duration();
        if !(self.sde_dt > 0.0) || self.sde_dt > tau * (1.0 + 1e-12) {
            return Err(MixError::InvalidParameter(format!(
                "sde_dt = {} must lie in (0, {tau}]",
                self.sde_dt
            )));
        }
        Ok(())
    }
}

/// Pointwise evaluation of a field through its nonzero Fourier modes; exact
/// for the trigonometric interpolant of the grid values.
#[derive(Debug, Clone)]
pub struct SpectralInterpolant {
    modes: Vec<(f64, f64, C64)>,
}

impl SpectralInterpolant {
    pub fn new(f: &ScalarField) -> Self {
        let n = f.grid().n();
        let spec = f.spectrum();
        let floor = 1e-30 * spec.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let modes = spec
            .iter()
            .enumerate()
            .filter(|(_, z)| z.norm_sqr() > floor)
            .map(|(i, z)| (freq(i % n, n) as f64, freq(i / n, n) as f64, *z))
            .collect();
        SpectralInterpolant { modes }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.modes
            .iter()
            .map(|&(k1, k2, c)| {
                let (s, co) = (2.0 * PI * (k1 * x1 + k2 * x2)).sin_cos();
                c.re * co - c.im * s
            })
            .sum()
    }
}

/// Sub-intervals `(step, length)` met walking backward from `t` to 0.
fn backward_segments(schedule: &ShearSchedule, t: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (i, step) in schedule.steps().iter().enumerate().rev() {
        let a = schedule.start_of(i);
        if a >= t {
            continue;
        }
        let b = (a + step.duration).min(t);
        out.push((i, b - a));
    }
    out
}

/// Pull `(x1, x2)` back from time `t` to 0 along one noisy characteristic.
/// With `kappa = 0` no random numbers are drawn and each shear is applied
/// exactly.
fn pull_back(
    schedule: &ShearSchedule,
    segments: &[(usize, f64)],
    kappa: f64,
    sde_dt: f64,
    x: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> [f64; 2] {
    let [mut y1, mut y2] = x;
    for &(i, len) in segments {
        let step = &schedule.steps()[i];
        if kappa == 0.0 {
            let v = step.velocity(y1, y2);
            y1 -= v[0] * len;
            y2 -= v[1] * len;
            continue;
        }
        let m = (len / sde_dt * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = len / m as f64;
        let sigma = (2.0 * kappa * h).sqrt();
        for _ in 0..m {
            // the drift depends only on the transverse coordinate
            let (along, across) = match step.axis {
                Axis::X1 => (&mut y1, &mut y2),
                Axis::X2 => (&mut y2, &mut y1),
            };
            *along -= step.profile.value(*across - step.phase) * h;
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            *along += sigma * z1;
            *across += sigma * z2;
        }
    }
    [y1.rem_euclid(1.0), y2.rem_euclid(1.0)]
}

/// Sample mean and standard error of `rho0` at the pulled-back points.
/// Path `p` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `p`, so the
/// result is independent of thread count.
pub fn feynman_kac_estimate(
    rho0: &ScalarField,
    schedule: &ShearSchedule,
    kappa: f64,
    t: f64,
    x: [f64; 2],
    mc: &McConfig,
) -> Result<(f64, f64)> {
    let interp = SpectralInterpolant::new(rho0);
    feynman_kac_with(&interp, schedule, kappa, t, x, mc)
}

/// [`feynman_kac_estimate`] with a prebuilt interpolant, for many points.
pub fn feynman_kac_with(
    interp: &SpectralInterpolant,
    schedule: &ShearSchedule,
    kappa: f64,
    t: f64,
    x: [f64; 2],
    mc: &McConfig,
) -> Result<(f64, f64)> {
    mc.validate(schedule)?;
    if !(kappa >= 0.0) {
        return Err(MixError::InvalidParameter(format!("kappa = {kappa} must be >= 0")));
    }
    let horizon = schedule.horizon();
    if !(t >= 0.0) || t > horizon * (1.0 + 1e-12) {
        return Err(MixError::Horizon { t, horizon });
    }
    let segments = backward_segments(schedule, t);
    let samples: Vec<f64> = (0..mc.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
            rng.set_stream(p as u64);
            let y = pull_back(schedule, &segments, kappa, mc.sde_dt, x, &mut rng);
            interp.eval(y[0], y[1])
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::flows::{pierrehumbert_schedule, sine_profile, ScheduleStep};
    use crate::solver::{advance_schedule, SolverConfig};

    fn single_shear(duration: f64) -> ShearSchedule {
        ShearSchedule::new(vec![ScheduleStep {
            axis: Axis::X1,
            profile: sine_profile(1.0, 1),
            phase: 0.0,
            duration,
        }])
        .unwrap()
    }

    fn zero_flow(duration: f64) -> ShearSchedule {
        ShearSchedule::new(vec![ScheduleStep {
            axis: Axis::X1,
            profile: sine_profile(0.0, 1),
            phase: 0.0,
            duration,
        }])
        .unwrap()
    }

    #[test]
    fn interpolant_reproduces_grid_values_and_off_grid_modes() {
        let g = Grid::new(32).unwrap();
        let f = ScalarField::random_band_limited(g, 3, 6).unwrap();
        let p = SpectralInterpolant::new(&f);
        for (i, j) in [(0, 0), (3, 17), (31, 5)] {
            assert!((p.eval(g.coord(i), g.coord(j)) - f.at(i, j)).abs() < 1e-12);
        }
        let s = SpectralInterpolant::new(&ScalarField::sin_mode(g, 2, -1, 1.0));
        let (x1, x2) = (0.123, 0.777);
        let exact = (2.0 * PI * (2.0 * x1 - x2)).sin();
        assert!((s.eval(x1, x2) - exact).abs() < 1e-13);
    }

    #[test]
    fn zero_noise_single_shear_matches_characteristics() {
        let g = Grid::new(64).unwrap();
        let rho0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let t = 0.7;
        let mc = McConfig { n_paths: 100, sde_dt: 0.01, seed: 1 };
        for x in [[0.1, 0.2], [0.55, 0.9], [0.31, 0.47]] {
            let (est, se) = feynman_kac_estimate(&rho0, &single_shear(1.0), 0.0, t, x, &mc).unwrap();
            let exact = (2.0 * PI * (x[0] - (2.0 * PI * x[1]).sin() * t)).sin();
            assert!((est - exact).abs() < 1e-10, "{est} {exact}");
            assert!(se < 1e-12);
        }
    }

    #[test]
    fn zero_noise_matches_exact_shear_composition() {
        // the split path with kappa = 0 is a composition of exact shear steps
        // weak shears keep the composed field far below Nyquist, so the grid
        // result is the exact solution to roundoff
        let g = Grid::new(128).unwrap();
        let rho0 = ScalarField::random_band_limited(g, 9, 4).unwrap();
        let sched = pierrehumbert_schedule(0.5, 4, 0.1, 4).unwrap();
        let f = advance_schedule(&rho0, &sched, &SolverConfig::new(g, 0.0, 0.5).unwrap())
            .unwrap()
            .final_field;
        let fin = SpectralInterpolant::new(&f);
        let mc = McConfig { n_paths: 100, sde_dt: 0.5, seed: 0 };
        for x in [[0.2, 0.3], [0.71, 0.05], [0.44, 0.62]] {
            let (est, _) = feynman_kac_estimate(&rho0, &sched, 0.0, 2.0, x, &mc).unwrap();
            assert!((est - fin.eval(x[0], x[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn heat_solution_within_three_stderr() {
        let g = Grid::new(32).unwrap();
        let rho0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let (kappa, t) = (0.01, 1.0);
        let mc = McConfig { n_paths: 4000, sde_dt: 0.05, seed: 11 };
        for x in [[0.1, 0.4], [0.3, 0.8], [0.8, 0.1]] {
            let (est, se) = feynman_kac_estimate(&rho0, &zero_flow(1.0), kappa, t, x, &mc).unwrap();
            let exact = (-4.0 * PI * PI * kappa * t).exp() * (2.0 * PI * x[0]).sin();
            assert!((est - exact).abs() <= 3.0 * se, "{est} {exact} {se}");
        }
    }

    #[test]
    fn stderr_halves_when_paths_quadruple() {
        let g = Grid::new(32).unwrap();
        let rho0 = ScalarField::sin_mode(g, 1, 1, 1.0);
        let sched = pierrehumbert_schedule(1.0, 2, 1.0, 2).unwrap();
        let x = [0.37, 0.61];
        let se = |n_paths| {
            let mc = McConfig { n_paths, sde_dt: 1.0 / 32.0, seed: 5 };
            feynman_kac_estimate(&rho0, &sched, 0.05, 2.0, x, &mc).unwrap().1
        };
        let ratio = se(1000) / se(4000);
        assert!((ratio / 2.0 - 1.0).abs() < 0.5 && ratio > 2.0 / 1.5, "{ratio}");
    }

    #[test]
    fn deterministic_given_seed() {
        let g = Grid::new(32).unwrap();
        let rho0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let sched = pierrehumbert_schedule(1.0, 2, 1.0, 2).unwrap();
        let mc = McConfig { n_paths: 500, sde_dt: 0.1, seed: 3 };
        let a = feynman_kac_estimate(&rho0, &sched, 1e-2, 1.5, [0.2, 0.4], &mc).unwrap();
        let b = feynman_kac_estimate(&rho0, &sched, 1e-2, 1.5, [0.2, 0.4], &mc).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn agrees_with_split_solver() {
        let g = Grid::new(64).unwrap();
        let rho0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let sched = pierrehumbert_schedule(1.0, 7, 1.0, 2).unwrap();
        let kappa = 1e-2;
        let cfg = SolverConfig::new(g, kappa, 1.0 / 64.0).unwrap();
        let traj = advance_schedule(&rho0, &sched, &cfg).unwrap();
        let fin = SpectralInterpolant::new(&traj.final_field);
        let mc = McConfig { n_paths: 4000, sde_dt: 1.0 / 64.0, seed: 21 };
        let mut ok = 0;
        for x in [[0.1, 0.1], [0.35, 0.6], [0.6, 0.35], [0.85, 0.9]] {
            let (est, se) = feynman_kac_estimate(&rho0, &sched, kappa, 2.0, x, &mc).unwrap();
            if (est - fin.eval(x[0], x[1])).abs() <= 3.0 * se + 1e-3 {
                ok += 1;
            }
        }
        assert!(ok >= 3, "{ok}/4");
    }

    #[test]
    fn rejects_bad_config() {
        let g = Grid::new(32).unwrap();
        let rho0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let sched = single_shear(1.0);
        let few = McConfig { n_paths: 10, sde_dt: 0.1, seed: 0 };
        assert!(feynman_kac_estimate(&rho0, &sched, 0.0, 0.5, [0.0, 0.0], &few).is_err());
        let coarse = McConfig { n_paths: 100, sde_dt: 2.0, seed: 0 };
        assert!(feynman_kac_estimate(&rho0, &sched, 0.0, 0.5, [0.0, 0.0], &coarse).is_err());
        let ok = McConfig { n_paths: 100, sde_dt: 0.1, seed: 0 };
        assert!(feynman_kac_estimate(&rho0, &sched, 0.0, 5.0, [0.0, 0.0], &ok).is_err());
    }
}
