//! Catalog of incompressible velocity fields on the unit torus.
//!
//! Every time-dependent flow in the catalog is a piecewise-in-time sequence of
//! shears; those are expanded into a [`ShearSchedule`], the form the exact
//! shear solver consumes. The cellular flow is autonomous and smooth and is
//! sampled pointwise for the pseudo-spectral path.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::field::{Grid, ScalarField};
use crate::spectral::{freq, Fft2, C64};

/// Direction of the velocity of a shear. `X1` means `u = (v(x2), 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    X1,
    X2,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::X1 => Axis::X2,
            Axis::X2 => Axis::X1,
        }
    }
}

/// One-dimensional periodic profile `v` of a shear.
#[derive(Debug, Clone, PartialEq)]
pub enum ShearProfile {
    /// `amplitude * sin(2 pi f x)` when `m = 2`, `amplitude * sin^m(pi f x)` when `m > 2`.
    Kolmogorov { m: u32, amplitude: f64, frequency: u32 },
    /// Piecewise-linear hat, zero at `x = 0`, peak `amplitude` at `x = 1/2`.
    Tent { amplitude: f64 },
    Constant { amplitude: f64 },
    /// Values at the grid points `j/n`, interpolated trigonometrically.
    Samples(Vec<f64>),
}

/// Kolmogorov-type profile with a critical point of order `m` at `x = 0`.
pub fn kolmogorov_profile(m: u32, amplitude: f64) -> Result<ShearProfile> {
    if m < 2 {
        return Err(MixError::InvalidParameter(format!(
            "degeneracy order m = {m} must be >= 2"
        )));
    }
    Ok(ShearProfile::Kolmogorov {
        m,
        amplitude,
        frequency: 1,
    })
}

/// Single sine shear `amplitude * sin(2 pi frequency x)`.
pub fn sine_profile(amplitude: f64, frequency: u32) -> ShearProfile {
    ShearProfile::Kolmogorov {
        m: 2,
        amplitude,
        frequency,
    }
}

impl ShearProfile {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            ShearProfile::Kolmogorov {
                m,
                amplitude,
                frequency,
            } => {
                let f = *frequency as f64;
                if *m == 2 {
                    amplitude * (2.0 * PI * f * x).sin()
                } else {
                    amplitude * (PI * f * x).sin().powi(*m as i32)
                }
            }
            ShearProfile::Tent { amplitude } => {
                let y = x.rem_euclid(1.0);
                amplitude * (1.0 - 2.0 * (y - 0.5).abs())
            }
            ShearProfile::Constant { amplitude } => *amplitude,
            ShearProfile::Samples(v) => trig_interpolate(v, x),
        }
    }

    /// `v(x_j - phase)` at the `n` grid points.
    pub fn sample(&self, n: usize, phase: f64) -> Vec<f64> {
        match self {
            ShearProfile::Samples(v) if v.len() == n && phase == 0.0 => v.clone(),
            _ => (0..n)
                .map(|j| self.value(j as f64 / n as f64 - phase))
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ShearProfile::Kolmogorov { amplitude, .. }
            | ShearProfile::Tent { amplitude }
            | ShearProfile::Constant { amplitude } => *amplitude == 0.0,
            ShearProfile::Samples(v) => v.iter().all(|&x| x == 0.0),
        }
    }

    /// Points where `v' = 0`, in `[0, 1)`; empty when not known in closed form.
    pub fn critical_points(&self) -> Vec<f64> {
        match self {
            ShearProfile::Kolmogorov { m, frequency, .. } => {
                let f = *frequency as f64;
                if *m == 2 {
                    (0..2 * frequency).map(|k| (2 * k + 1) as f64 / (4.0 * f)).collect()
                } else {
                    // zeros of order m and the maxima between them
                    (0..2 * frequency).map(|k| k as f64 / (2.0 * f)).collect()
                }
            }
            ShearProfile::Tent { .. } => vec![0.0, 0.5],
            _ => Vec::new(),
        }
    }

    /// `sup |v|`.
    pub fn max_speed(&self) -> f64 {
        match self {
            ShearProfile::Kolmogorov { amplitude, .. }
            | ShearProfile::Tent { amplitude }
            | ShearProfile::Constant { amplitude } => amplitude.abs(),
            ShearProfile::Samples(v) => v.iter().fold(0.0f64, |a, x| a.max(x.abs())),
        }
    }

    /// `sup |v'|`, closed form for the analytic kinds.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ShearProfile::Kolmogorov {
                m,
                amplitude,
                frequency,
            } => {
                let f = *frequency as f64;
                if *m == 2 {
                    2.0 * PI * f * amplitude.abs()
                } else {
                    // max of m pi f s^{m-1} sqrt(1-s^2) at s^2 = (m-1)/m
                    let m = *m as f64;
                    m * PI * f * amplitude.abs() * ((m - 1.0) / m).powf((m - 1.0) / 2.0)
                        / m.sqrt()
                }
            }
            ShearProfile::Tent { amplitude } => 2.0 * amplitude.abs(),
            ShearProfile::Constant { .. } => 0.0,
            ShearProfile::Samples(v) => {
                let n = v.len();
                (0..n)
                    .map(|j| (v[(j + 1) % n] - v[j]).abs() * n as f64)
                    .fold(0.0, f64::max)
            }
        }
    }
}

fn trig_interpolate(samples: &[f64], x: f64) -> f64 {
    let n = samples.len();
    let mut acc = 0.0;
    for k in -(n as i64 / 2 - 1)..=(n as i64 / 2 - 1) {
        let mut c = C64::new(0.0, 0.0);
        for (j, &s) in samples.iter().enumerate() {
            c += C64::from_polar(s, -2.0 * PI * (k as f64) * j as f64 / n as f64);
        }
        c /= n as f64;
        acc += (c * C64::from_polar(1.0, 2.0 * PI * k as f64 * x)).re;
    }
    acc
}

/// One constant-in-time shear acting for `duration`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleStep {
    pub axis: Axis,
    pub profile: ShearProfile,
    pub phase: f64,
    pub duration: f64,
}

impl ScheduleStep {
    /// Velocity at `(x1, x2)` while this step is active.
    pub fn velocity(&self, x1: f64, x2: f64) -> [f64; 2] {
        match self.axis {
            Axis::X1 => [self.profile.value(x2 - self.phase), 0.0],
            Axis::X2 => [0.0, self.profile.value(x1 - self.phase)],
        }
    }
}

/// Piecewise-constant-in-time sequence of shears.
#[derive(Debug, Clone, PartialEq)]
pub struct ShearSchedule {
    steps: Vec<ScheduleStep>,
    starts: Vec<f64>,
}

impl ShearSchedule {
    pub fn new(steps: Vec<ScheduleStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(MixError::InvalidParameter("empty schedule".into()));
        }
        let mut starts = Vec::with_capacity(steps.len());
        let mut t = 0.0;
        for s in &steps {
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return Err(MixError::InvalidParameter(format!(
                    "step duration {} must be positive",
                    s.duration
                )));
            }
            if !(0.0..1.0).contains(&s.phase) {
                return Err(MixError::InvalidParameter(format!(
                    "phase {} outside [0, 1)",
                    s.phase
                )));
            }
            starts.push(t);
            t += s.duration;
        }
        Ok(ShearSchedule { steps, starts })
    }

    pub fn steps(&self) -> &[ScheduleStep] {
        &self.steps
    }

    pub fn start_of(&self, i: usize) -> f64 {
        self.starts[i]
    }

    pub fn horizon(&self) -> f64 {
        self.starts.last().unwrap() + self.steps.last().unwrap().duration
    }

    /// Index of the step active at time `t` (steps are closed on the left).
    pub fn step_index_at(&self, t: f64) -> usize {
        match self.starts.partition_point(|&s| s <= t) {
            0 => 0,
            i => i - 1,
        }
    }

    pub fn velocity_at(&self, t: f64, x1: f64, x2: f64) -> [f64; 2] {
        self.steps[self.step_index_at(t)].velocity(x1, x2)
    }

    /// `sup_t ||grad u(t)||_inf` from the profiles' closed-form Lipschitz constants.
    pub fn lipschitz_sup(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.profile.lipschitz())
            .fold(0.0, f64::max)
    }

    pub fn max_speed(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.profile.max_speed())
            .fold(0.0, f64::max)
    }

    /// Shortest step duration.
    pub fn min_duration(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.duration)
            .fold(f64::INFINITY, f64::min)
    }

    /// Extend with a zero-velocity step so the schedule covers `horizon`.
    pub fn padded_to(mut self, horizon: f64) -> Self {
        let end = self.horizon();
        if horizon > end * (1.0 + 1e-12) {
            self.starts.push(end);
            self.steps.push(ScheduleStep {
                axis: Axis::X1,
                profile: ShearProfile::Constant { amplitude: 0.0 },
                phase: 0.0,
                duration: horizon - end,
            });
        }
        self
    }
}

/// Randomly phased alternating sine shears. Step `2j` shears along `x1` with
/// profile `amplitude * sin(2 pi (x2 - w1_j))`, step `2j+1` along `x2` with
/// `amplitude * sin(2 pi (x1 - w2_j))`.
///
/// Phases are i.i.d. uniform on `[0,1)`, drawn in the order `w1_0, w2_0, w1_1, ...`
/// from `ChaCha8Rng::seed_from_u64(seed)`.
pub fn pierrehumbert_schedule(
    tau: f64,
    seed: u64,
    amplitude: f64,
    n_steps: usize,
) -> Result<ShearSchedule> {
    if !(tau > 0.0) || n_steps == 0 {
        return Err(MixError::InvalidParameter(format!(
            "need tau > 0 and n_steps >= 1 (got {tau}, {n_steps})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(n_steps);
    while steps.len() < n_steps {
        let w1: f64 = rng.gen();
        let w2: f64 = rng.gen();
        for (axis, phase) in [(Axis::X1, w1), (Axis::X2, w2)] {
            if steps.len() < n_steps {
                steps.push(ScheduleStep {
                    axis,
                    profile: sine_profile(amplitude, 1),
                    phase,
                    duration: tau,
                });
            }
        }
    }
    ShearSchedule::new(steps)
}

/// Deterministic alternating tent shears with period `2 tau`.
pub fn alternating_tent_schedule(tau: f64, amplitude: f64, n_steps: usize) -> Result<ShearSchedule> {
    if !(tau > 0.0) || n_steps == 0 {
        return Err(MixError::InvalidParameter(format!(
            "need tau > 0 and n_steps >= 1 (got {tau}, {n_steps})"
        )));
    }
    let steps = (0..n_steps)
        .map(|i| ScheduleStep {
            axis: if i % 2 == 0 { Axis::X1 } else { Axis::X2 },
            profile: ShearProfile::Tent { amplitude },
            phase: 0.0,
            duration: tau,
        })
        .collect();
    ShearSchedule::new(steps)
}

/// Stage parameters of the self-similar cascade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeStage {
    pub frequency: u32,
    /// `1 / frequency`
    pub scale: f64,
    pub amplitude: f64,
    pub duration: f64,
}

/// Stage table: stage `j` has frequency `round(lambda_ratio^-j)`, scale
/// `lambda_j = 1/frequency`, amplitude `lambda_j^alpha` and duration proportional
/// to `lambda_j^(1-alpha)`, normalized so the durations sum to `t_singular`.
pub fn cascade_stages(
    alpha: f64,
    t_singular: f64,
    lambda_ratio: f64,
    n_stages: usize,
) -> Result<Vec<CascadeStage>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MixError::InvalidParameter(format!("alpha {alpha} not in (0,1)")));
    }
    if !(lambda_ratio > 0.0 && lambda_ratio < 1.0) {
        return Err(MixError::InvalidParameter(format!(
            "lambda_ratio {lambda_ratio} not in (0,1)"
        )));
    }
    if !(t_singular > 0.0) || n_stages == 0 {
        return Err(MixError::InvalidParameter(format!(
            "need T > 0 and n_stages >= 1 (got {t_singular}, {n_stages})"
        )));
    }
    let mut stages: Vec<CascadeStage> = (0..n_stages)
        .map(|j| {
            let frequency = lambda_ratio.powi(-(j as i32)).round().max(1.0) as u32;
            let scale = 1.0 / frequency as f64;
            CascadeStage {
                frequency,
                scale,
                amplitude: scale.powf(alpha),
                duration: scale.powf(1.0 - alpha),
            }
        })
        .collect();
    let total: f64 = stages.iter().map(|s| s.duration).sum();
    for s in &mut stages {
        s.duration *= t_singular / total;
    }
    Ok(stages)
}

/// Expand the cascade into shears; each stage is an `x1` step followed by an
/// `x2` step of half the stage duration, with phases drawn as in
/// [`pierrehumbert_schedule`].
pub fn cascade_schedule(
    alpha: f64,
    t_singular: f64,
    lambda_ratio: f64,
    n_stages: usize,
    seed: u64,
    grid: Grid,
) -> Result<ShearSchedule> {
    let stages = cascade_stages(alpha, t_singular, lambda_ratio, n_stages)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(2 * n_stages);
    for (j, st) in stages.iter().enumerate() {
        if st.frequency as i64 > grid.max_frequency() {
            return Err(MixError::Resolution(format!(
                "stage frequency exceeds Nyquist: stage {j} has frequency {} but n={} resolves {}",
                st.frequency,
                grid.n(),
                grid.max_frequency()
            )));
        }
        let w1: f64 = rng.gen();
        let w2: f64 = rng.gen();
        for (axis, phase) in [(Axis::X1, w1), (Axis::X2, w2)] {
            steps.push(ScheduleStep {
                axis,
                profile: sine_profile(st.amplitude, st.frequency),
                phase,
                duration: 0.5 * st.duration,
            });
        }
    }
    ShearSchedule::new(steps)
}

/// Cellular velocity `(-d_{x2} H, d_{x1} H)` for `H = A eps sin(2 pi x1/eps) sin(2 pi x2/eps)`.
pub fn cellular_velocity(a: f64, eps: f64, x1: f64, x2: f64) -> Result<[f64; 2]> {
    let cells = cells_per_side(eps)?;
    Ok(cellular_velocity_unchecked(a, cells as f64, x1, x2))
}

fn cells_per_side(eps: f64) -> Result<u32> {
    let inv = 1.0 / eps;
    if !(eps > 0.0) || (inv - inv.round()).abs() > 1e-9 * inv {
        return Err(MixError::InvalidParameter(format!(
            "cell size eps = {eps} must be the reciprocal of a positive integer"
        )));
    }
    Ok(inv.round() as u32)
}

#[inline]
fn cellular_velocity_unchecked(a: f64, cells: f64, x1: f64, x2: f64) -> [f64; 2] {
    let w = 2.0 * PI * cells;
    let (s1, c1) = (w * x1).sin_cos();
    let (s2, c2) = (w * x2).sin_cos();
    [-2.0 * PI * a * s1 * c2, 2.0 * PI * a * c1 * s2]
}

/// Declarative description of a velocity field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlowRecord", into = "FlowRecord")]
pub enum FlowSpec {
    Shear {
        profile: ShearProfile,
        axis: Axis,
    },
    Cellular {
        a: f64,
        eps: f64,
    },
    PierrehumbertRandom {
        tau: f64,
        seed: u64,
        amplitude: f64,
    },
    AlternatingTent {
        tau: f64,
        amplitude: f64,
    },
    SelfSimilarCascade {
        alpha: f64,
        t_singular: f64,
        lambda_ratio: f64,
        n_stages: usize,
        seed: u64,
    },
    Zero,
}

impl FlowSpec {
    pub fn kolmogorov(m: u32, amplitude: f64) -> Result<Self> {
        Ok(FlowSpec::Shear {
            profile: kolmogorov_profile(m, amplitude)?,
            axis: Axis::X1,
        })
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            FlowSpec::Shear { .. } => "shear",
            FlowSpec::Cellular { .. } => "cellular",
            FlowSpec::PierrehumbertRandom { .. } => "pierrehumbert_random",
            FlowSpec::AlternatingTent { .. } => "alternating_tent",
            FlowSpec::SelfSimilarCascade { .. } => "self_similar_cascade",
            FlowSpec::Zero => "zero",
        }
    }

    /// True when the flow expands into a [`ShearSchedule`].
    pub fn is_schedule_based(&self) -> bool {
        !matches!(self, FlowSpec::Cellular { .. })
    }

    /// Executable schedule covering at least `[0, horizon]`; `None` for the cellular flow.
    pub fn schedule(&self, horizon: f64, grid: Grid) -> Result<Option<ShearSchedule>> {
        if !(horizon > 0.0) {
            return Err(MixError::InvalidParameter(format!(
                "horizon {horizon} must be positive"
            )));
        }
        let steps_for = |tau: f64| ((horizon / tau) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let sched = match self {
            FlowSpec::Shear { profile, axis } => ShearSchedule::new(vec![ScheduleStep {
                axis: *axis,
                profile: profile.clone(),
                phase: 0.0,
                duration: horizon,
            }])?,
            FlowSpec::Zero => ShearSchedule::new(vec![ScheduleStep {
                axis: Axis::X1,
                profile: ShearProfile::Constant { amplitude: 0.0 },
                phase: 0.0,
                duration: horizon,
            }])?,
            FlowSpec::PierrehumbertRandom {
                tau,
                seed,
                amplitude,
            } => pierrehumbert_schedule(*tau, *seed, *amplitude, steps_for(*tau))?,
            FlowSpec::AlternatingTent { tau, amplitude } => {
                alternating_tent_schedule(*tau, *amplitude, steps_for(*tau))?
            }
            FlowSpec::SelfSimilarCascade {
                alpha,
                t_singular,
                lambda_ratio,
                n_stages,
                seed,
            } => cascade_schedule(*alpha, *t_singular, *lambda_ratio, *n_stages, *seed, grid)?
                .padded_to(horizon),
            FlowSpec::Cellular { .. } => return Ok(None),
        };
        Ok(Some(sched))
    }

    /// Analytic velocity at time `t`.
    pub fn velocity_at(&self, t: f64, x1: f64, x2: f64) -> Result<[f64; 2]> {
        match self {
            FlowSpec::Cellular { a, eps } => cellular_velocity(*a, *eps, x1, x2),
            FlowSpec::Zero => Ok([0.0, 0.0]),
            FlowSpec::Shear { profile, axis } => Ok(ScheduleStep {
                axis: *axis,
                profile: profile.clone(),
                phase: 0.0,
                duration: 1.0,
            }
            .velocity(x1, x2)),
            _ => {
                let sched = self
                    .schedule(t.max(0.0) + 1e-9, Grid::new(1 << 20).expect("valid"))?
                    .expect("schedule-based");
                Ok(sched.velocity_at(t, x1, x2))
            }
        }
    }

    /// Velocity components sampled on the grid at time `t`.
    pub fn sample_velocity(&self, grid: Grid, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = grid.n();
        let mut u1 = Vec::with_capacity(grid.len());
        let mut u2 = Vec::with_capacity(grid.len());
        if let FlowSpec::Cellular { a, eps } = self {
            let cells = cells_per_side(*eps)? as f64;
            for j in 0..n {
                for i in 0..n {
                    let [v1, v2] = cellular_velocity_unchecked(*a, cells, grid.coord(i), grid.coord(j));
                    u1.push(v1);
                    u2.push(v2);
                }
            }
            return Ok((u1, u2));
        }
        let step = match self {
            FlowSpec::Shear { profile, axis } => ScheduleStep {
                axis: *axis,
                profile: profile.clone(),
                phase: 0.0,
                duration: 1.0,
            },
            FlowSpec::Zero => ScheduleStep {
                axis: Axis::X1,
                profile: ShearProfile::Constant { amplitude: 0.0 },
                phase: 0.0,
                duration: 1.0,
            },
            _ => {
                let sched = self.schedule(t.max(0.0) + 1e-9, grid)?.expect("schedule-based");
                sched.steps()[sched.step_index_at(t)].clone()
            }
        };
        let profile = step.profile.sample(n, step.phase);
        for j in 0..n {
            for i in 0..n {
                match step.axis {
                    Axis::X1 => {
                        u1.push(profile[j]);
                        u2.push(0.0);
                    }
                    Axis::X2 => {
                        u1.push(0.0);
                        u2.push(profile[i]);
                    }
                }
            }
        }
        Ok((u1, u2))
    }

    /// `sup_x |u|` over all times.
    pub fn max_speed(&self, grid: Grid, horizon: f64) -> Result<f64> {
        Ok(match self {
            FlowSpec::Cellular { a, .. } => 2.0 * PI * a.abs(),
            FlowSpec::Zero => 0.0,
            FlowSpec::Shear { profile, .. } => profile.max_speed(),
            _ => self
                .schedule(horizon, grid)?
                .map(|s| s.max_speed())
                .unwrap_or(0.0),
        })
    }

    /// `sup_t ||grad u||_inf` in closed form.
    pub fn lipschitz_sup(&self, grid: Grid, horizon: f64) -> Result<f64> {
        Ok(match self {
            FlowSpec::Cellular { a, eps } => 4.0 * PI * PI * a.abs() / eps,
            FlowSpec::Zero => 0.0,
            FlowSpec::Shear { profile, .. } => profile.lipschitz(),
            _ => self
                .schedule(horizon, grid)?
                .map(|s| s.lipschitz_sup())
                .unwrap_or(0.0),
        })
    }
}

/// Max over the grid of the spectrally computed `div u` at time `t`.
pub fn divergence_residual(flow: &FlowSpec, grid: Grid, t: f64) -> Result<f64> {
    let n = grid.n();
    let (u1, u2) = flow.sample_velocity(grid, t)?;
    let s1 = ScalarField::from_values(grid, u1)?;
    let s2 = ScalarField::from_values(grid, u2)?;
    let mut div: Vec<C64> = s1
        .spectrum()
        .iter()
        .zip(s2.spectrum())
        .enumerate()
        .map(|(idx, (a, b))| {
            let k1 = freq(idx % n, n) as f64;
            let k2 = freq(idx / n, n) as f64;
            C64::new(0.0, 2.0 * PI) * (k1 * a + k2 * b)
        })
        .collect();
    Fft2::new(n).inverse(&mut div);
    Ok(div.iter().fold(0.0f64, |m, z| m.max(z.norm())))
}

/// Flat serialized form of [`FlowSpec`], as written in experiment configs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRecord {
    pub variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_stages: Option<usize>,
}

fn need<T>(v: Option<T>, variant: &str, field: &str) -> Result<T> {
    v.ok_or_else(|| MixError::Config(format!("flow variant '{variant}' requires field '{field}'")))
}

impl TryFrom<FlowRecord> for FlowSpec {
    type Error = MixError;

    fn try_from(r: FlowRecord) -> Result<Self> {
        let v = r.variant.as_str();
        let spec = match v {
            "shear" => {
                let amplitude = r.amplitude.unwrap_or(1.0);
                let profile = match r.profile.as_deref().unwrap_or("kolmogorov") {
                    "kolmogorov" => ShearProfile::Kolmogorov {
                        m: {
                            let m = r.m.unwrap_or(2);
                            kolmogorov_profile(m, amplitude)?;
                            m
                        },
                        amplitude,
                        frequency: r.frequency.unwrap_or(1),
                    },
                    "tent" => ShearProfile::Tent { amplitude },
                    "constant" => ShearProfile::Constant { amplitude },
                    "samples" => ShearProfile::Samples(need(r.samples, v, "samples")?),
                    other => {
                        return Err(MixError::Config(format!("unknown shear profile '{other}'")))
                    }
                };
                FlowSpec::Shear {
                    profile,
                    axis: r.axis.unwrap_or_default(),
                }
            }
            "cellular" => {
                let a = need(r.a, v, "A")?;
                let eps = need(r.eps, v, "eps")?;
                if !(a > 0.0) {
                    return Err(MixError::Config(format!("cellular amplitude A = {a} must be > 0")));
                }
                cells_per_side(eps)?;
                FlowSpec::Cellular { a, eps }
            }
            "pierrehumbert_random" => FlowSpec::PierrehumbertRandom {
                tau: positive(need(r.tau, v, "tau")?, "tau")?,
                seed: r.seed.unwrap_or(0),
                amplitude: r.amplitude.unwrap_or(1.0),
            },
            "alternating_tent" => FlowSpec::AlternatingTent {
                tau: positive(need(r.tau, v, "tau")?, "tau")?,
                amplitude: r.amplitude.unwrap_or(1.0),
            },
            "self_similar_cascade" => {
                let spec = FlowSpec::SelfSimilarCascade {
                    alpha: need(r.alpha, v, "alpha")?,
                    t_singular: need(r.t, v, "T")?,
                    lambda_ratio: need(r.lambda_ratio, v, "lambda_ratio")?,
                    n_stages: need(r.n_stages, v, "n_stages")?,
                    seed: r.seed.unwrap_or(0),
                };
                if let FlowSpec::SelfSimilarCascade {
                    alpha,
                    t_singular,
                    lambda_ratio,
                    n_stages,
                    ..
                } = &spec
                {
                    cascade_stages(*alpha, *t_singular, *lambda_ratio, *n_stages)?;
                }
                spec
            }
            "zero" => FlowSpec::Zero,
            other => return Err(MixError::Config(format!("unknown flow variant '{other}'"))),
        };
        Ok(spec)
    }
}

fn positive(x: f64, name: &str) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(MixError::Config(format!("{name} = {x} must be positive")))
    }
}

impl From<FlowSpec> for FlowRecord {
    fn from(f: FlowSpec) -> Self {
        let mut r = FlowRecord {
            variant: f.variant_name().to_string(),
            ..Default::default()
        };
        match f {
            FlowSpec::Shear { profile, axis } => {
                r.axis = Some(axis);
                match profile {
                    ShearProfile::Kolmogorov {
                        m,
                        amplitude,
                        frequency,
                    } => {
                        r.profile = Some("kolmogorov".into());
                        r.m = Some(m);
                        r.amplitude = Some(amplitude);
                        r.frequency = Some(frequency);
                    }
                    ShearProfile::Tent { amplitude } => {
                        r.profile = Some("tent".into());
                        r.amplitude = Some(amplitude);
                    }
                    ShearProfile::Constant { amplitude } => {
                        r.profile = Some("constant".into());
                        r.amplitude = Some(amplitude);
                    }
                    ShearProfile::Samples(s) => {
                        r.profile = Some("samples".into());
                        r.samples = Some(s);
                    }
                }
            }
            FlowSpec::Cellular { a, eps } => {
                r.a = Some(a);
                r.eps = Some(eps);
            }
            FlowSpec::PierrehumbertRandom {
                tau,
                seed,
                amplitude,
            } => {
                r.tau = Some(tau);
                r.seed = Some(seed);
                r.amplitude = Some(amplitude);
            }
            FlowSpec::AlternatingTent { tau, amplitude } => {
                r.tau = Some(tau);
                r.amplitude = Some(amplitude);
            }
            FlowSpec::SelfSimilarCascade {
                alpha,
                t_singular,
                lambda_ratio,
                n_stages,
                seed,
            } => {
                r.alpha = Some(alpha);
                r.t = Some(t_singular);
                r.lambda_ratio = Some(lambda_ratio);
                r.n_stages = Some(n_stages);
                r.seed = Some(seed);
            }
            FlowSpec::Zero => {}
        }
        r
    }
}
