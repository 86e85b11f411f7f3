//! Time integration of transport (`kappa = 0`) and advection-diffusion.
//!
//! Two paths share one state representation (a spectrum in the layout of
//! [`crate::spectral`]):
//!
//! * shear schedules are advanced by operator splitting. Each shear sub-step is
//!   a per-line phase shift, exact for the trigonometric interpolant, and each
//!   diffusion sub-step is the exact heat semigroup. The energy removed by a
//!   diffusion sub-step is booked analytically, per mode.
//! * smooth autonomous flows (cellular, or a shear run for comparison) use a
//!   pseudo-spectral right-hand side with two-thirds dealiasing, integrating
//!   factor for diffusion and classical RK4 in time.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::field::{norm_triplet_sq, Grid, ScalarField};
use crate::flows::{Axis, FlowSpec, ShearProfile, ShearSchedule};
use crate::spectral::{
    freq, k_squared, transpose, two_thirds_cutoff, Fft2, C64,
};

/// Advective stability bound: `dt * max_speed * n` may not exceed this.
pub const CFL_LIMIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Dealias {
    #[default]
    TwoThirds,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Splitting {
    #[default]
    Strang,
    Lie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(rename = "n")]
    pub grid: Grid,
    #[serde(default)]
    pub kappa: f64,
    /// Largest sub-step for split schedules and the RK4 step for the pseudo-spectral path.
    pub dt: f64,
    #[serde(default)]
    pub dealias: Dealias,
    #[serde(default)]
    pub splitting: Splitting,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

fn default_stride() -> usize {
    usize::MAX
}

impl SolverConfig {
    pub fn new(grid: Grid, kappa: f64, dt: f64) -> Result<Self> {
        let cfg = SolverConfig {
            grid,
            kappa,
            dt,
            dealias: Dealias::TwoThirds,
            splitting: Splitting::Strang,
            snapshot_stride: usize::MAX,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_snapshot_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride.max(1);
        self
    }

    pub fn with_splitting(mut self, splitting: Splitting) -> Self {
        self.splitting = splitting;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(MixError::InvalidParameter(format!(
                "kappa = {} must be >= 0",
                self.kappa
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(MixError::InvalidParameter(format!("dt = {} must be > 0", self.dt)));
        }
        if self.snapshot_stride == 0 {
            return Err(MixError::InvalidParameter("snapshot_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// `dt * max_speed * n`.
    pub fn cfl(&self, max_speed: f64) -> f64 {
        self.dt * max_speed * self.grid.n() as f64
    }

    pub fn check_stability(&self, max_speed: f64) -> Result<()> {
        let cfl = self.cfl(max_speed);
        if cfl > CFL_LIMIT {
            return Err(MixError::Stability {
                cfl,
                limit: CFL_LIMIT,
            });
        }
        Ok(())
    }
}

/// Diagnostics recorded at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub t: f64,
    pub l2: f64,
    pub h_minus_1: f64,
    pub h1: f64,
    /// `int_0^t ||grad rho||_{L2}^2 ds`
    pub cum_dissipation: f64,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub index: usize,
    pub t: f64,
    pub field: ScalarField,
}

/// Recorded evolution of one run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kappa: f64,
    pub series: Vec<SeriesRecord>,
    pub snapshots: Vec<Snapshot>,
    /// Indices into `series` that close a schedule step.
    pub step_ends: Vec<usize>,
    pub final_field: ScalarField,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.series.iter().map(|r| r.t).collect()
    }

    pub fn first(&self) -> &SeriesRecord {
        &self.series[0]
    }

    pub fn last(&self) -> &SeriesRecord {
        self.series.last().expect("trajectory has at least one record")
    }

    /// `(t, h_minus_1)` pairs, optionally restricted to schedule-step ends.
    pub fn h_minus_1_series(&self, per_step: bool) -> Vec<(f64, f64)> {
        self.pick(per_step, |r| r.h_minus_1)
    }

    pub fn h1_series(&self, per_step: bool) -> Vec<(f64, f64)> {
        self.pick(per_step, |r| r.h1)
    }

    pub fn l2_series(&self) -> Vec<(f64, f64)> {
        self.pick(false, |r| r.l2)
    }

    fn pick(&self, per_step: bool, f: impl Fn(&SeriesRecord) -> f64) -> Vec<(f64, f64)> {
        if per_step {
            std::iter::once(0)
                .chain(self.step_ends.iter().copied())
                .map(|i| (self.series[i].t, f(&self.series[i])))
                .collect()
        } else {
            self.series.iter().map(|r| (r.t, f(r))).collect()
        }
    }
}

pub(crate) struct Recorder {
    grid: Grid,
    stride: usize,
    series: Vec<SeriesRecord>,
    snapshots: Vec<Snapshot>,
    step_ends: Vec<usize>,
    cum: f64,
}

impl Recorder {
    pub(crate) fn new(grid: Grid, stride: usize, spec: &[C64]) -> Self {
        let mut r = Recorder {
            grid,
            stride: stride.max(1),
            series: Vec::new(),
            snapshots: Vec::new(),
            step_ends: Vec::new(),
            cum: 0.0,
        };
        r.push(0.0, spec, 0.0);
        r
    }

    pub(crate) fn push(&mut self, t: f64, spec: &[C64], dissipated: f64) {
        let norms = norm_triplet_sq(spec, self.grid.n());
        self.push_norms(t, norms, dissipated, || spec.to_vec());
    }

    fn push_norms(
        &mut self,
        t: f64,
        (l2, hm1, h1): (f64, f64, f64),
        dissipated: f64,
        spectrum: impl FnOnce() -> Vec<C64>,
    ) {
        self.cum += dissipated;
        let index = self.series.len();
        if index % self.stride == 0 {
            self.snapshots.push(Snapshot {
                index,
                t,
                field: ScalarField::from_spectrum_unchecked(self.grid, spectrum()),
            });
        }
        self.series.push(SeriesRecord {
            t,
            l2: l2.sqrt(),
            h_minus_1: hm1.sqrt(),
            h1: h1.sqrt(),
            cum_dissipation: self.cum,
        });
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let last = self.series.last().expect("non-empty");
        if !last.l2.is_finite() || !last.h1.is_finite() {
            return Err(MixError::NonFinite { t: last.t });
        }
        Ok(())
    }

    pub(crate) fn finish(self, kappa: f64, spec: Vec<C64>) -> Trajectory {
        Trajectory {
            kappa,
            series: self.series,
            snapshots: self.snapshots,
            step_ends: self.step_ends,
            final_field: ScalarField::from_spectrum_unchecked(self.grid, spec),
        }
    }
}

/// Multiplies by the heat semigroup and books the dissipated energy.
struct HeatKernel {
    n: usize,
    kappa: f64,
    k2: Vec<f64>,
    cached_t: f64,
    factor: Vec<f64>,
    /// `(1 - factor^2) / (2 kappa)` per mode
    loss: Vec<f64>,
}

impl HeatKernel {
    fn new(n: usize, kappa: f64) -> Self {
        HeatKernel {
            n,
            kappa,
            k2: (0..n * n).map(|i| k_squared(i, n)).collect(),
            cached_t: f64::NAN,
            factor: Vec::new(),
            loss: Vec::new(),
        }
    }

    /// Apply `exp(t kappa Laplacian)`; returns `int ||grad rho||^2 ds` over the interval.
    fn apply(&mut self, spec: &mut [C64], t: f64) -> f64 {
        if self.kappa == 0.0 || t == 0.0 {
            return 0.0;
        }
        if t != self.cached_t {
            let c = 4.0 * PI * PI * self.kappa * t;
            self.factor = self.k2.iter().map(|&k| (-c * k).exp()).collect();
            self.loss = self
                .k2
                .iter()
                .map(|&k| -(-2.0 * c * k).exp_m1() / (2.0 * self.kappa))
                .collect();
            self.cached_t = t;
        }
        debug_assert_eq!(spec.len(), self.n * self.n);
        let mut dissipated = 0.0;
        for ((z, &f), &l) in spec.iter_mut().zip(&self.factor).zip(&self.loss) {
            dissipated += l * z.norm_sqr();
            *z *= f;
        }
        dissipated
    }
}

/// Per-line phase shifts implementing an exact shear on a spectrum.
pub(crate) struct ShearKernel {
    n: usize,
    fft: Fft2,
    powers: Vec<C64>,
    base: Vec<C64>,
}

impl ShearKernel {
    pub(crate) fn new(n: usize) -> Self {
        ShearKernel {
            n,
            fft: Fft2::new(n),
            powers: vec![C64::new(1.0, 0.0); n],
            base: vec![C64::new(1.0, 0.0); n],
        }
    }

    /// Translate along `axis` by `samples[j] * t`, where `j` indexes the
    /// transverse grid line. The Nyquist line along the shear direction has no
    /// real translate on the grid; it is left in place, which keeps the step
    /// unitary.
    pub(crate) fn apply(&mut self, spec: &mut [C64], axis: Axis, samples: &[f64], t: f64) {
        let n = self.n;
        let mean = spec[0];
        if axis == Axis::X1 {
            transpose(spec, n);
        }
        // rows are now indexed by the frequency along the shear direction,
        // columns by the transverse frequency
        self.fft.rows_inverse(spec);
        for (b, &v) in self.base.iter_mut().zip(samples) {
            *b = C64::from_polar(1.0, -2.0 * PI * v * t);
        }
        self.powers.iter_mut().for_each(|p| *p = C64::new(1.0, 0.0));
        let scale = 1.0 / n as f64;
        spec[..n].iter_mut().for_each(|z| *z *= scale);
        for k in 1..n / 2 {
            for (p, b) in self.powers.iter_mut().zip(&self.base) {
                *p *= b;
            }
            let (lo, hi) = spec.split_at_mut((n - k) * n);
            let row_pos = &mut lo[k * n..(k + 1) * n];
            let row_neg = &mut hi[..n];
            for ((zp, zn), p) in row_pos.iter_mut().zip(row_neg.iter_mut()).zip(&self.powers) {
                *zp *= p * scale;
                *zn *= p.conj() * scale;
            }
        }
        let h = n / 2;
        spec[h * n..(h + 1) * n].iter_mut().for_each(|z| *z *= scale);
        self.fft.rows_forward(spec);
        if axis == Axis::X1 {
            transpose(spec, n);
        }
        spec[0] = mean;
    }
}

fn check_grid(f: &ScalarField, grid: Grid) -> Result<()> {
    if f.grid() != grid {
        return Err(MixError::GridMismatch {
            expected: grid.n(),
            found: f.grid().n(),
        });
    }
    Ok(())
}

/// Transport by one shear for time `t`: along `x1` each row `x2 = const` is
/// translated by `v(x2) t` (the `x2` case is the transpose).
pub fn exact_shear_step(f: &ScalarField, profile: &ShearProfile, axis: Axis, t: f64) -> ScalarField {
    let n = f.grid().n();
    let mut spec = f.spectrum().to_vec();
    if t != 0.0 && !profile.is_zero() {
        let samples = profile.sample(n, 0.0);
        ShearKernel::new(n).apply(&mut spec, axis, &samples, t);
    }
    ScalarField::from_spectrum_unchecked(f.grid(), spec)
}

/// Exact heat semigroup: mode `k` is multiplied by `exp(-4 pi^2 kappa |k|^2 t)`.
pub fn diffusion_step(f: &ScalarField, kappa: f64, t: f64) -> ScalarField {
    let n = f.grid().n();
    let mut spec = f.spectrum().to_vec();
    HeatKernel::new(n, kappa).apply(&mut spec, t);
    ScalarField::from_spectrum_unchecked(f.grid(), spec)
}

/// Operator-split integrator for a shear schedule.
pub struct SplitEvolver {
    schedule: ShearSchedule,
    cfg: SolverConfig,
    shear: ShearKernel,
    heat: HeatKernel,
    samples_for: Option<usize>,
    samples: Vec<f64>,
}

impl SplitEvolver {
    pub fn new(schedule: ShearSchedule, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.grid.n();
        Ok(SplitEvolver {
            schedule,
            cfg,
            shear: ShearKernel::new(n),
            heat: HeatKernel::new(n, cfg.kappa),
            samples_for: None,
            samples: Vec::new(),
        })
    }

    pub fn schedule(&self) -> &ShearSchedule {
        &self.schedule
    }

    fn substep(&mut self, spec: &mut [C64], step: usize, h: f64) -> f64 {
        if self.samples_for != Some(step) {
            let s = &self.schedule.steps()[step];
            self.samples = if s.profile.is_zero() {
                Vec::new()
            } else {
                s.profile.sample(self.cfg.grid.n(), s.phase)
            };
            self.samples_for = Some(step);
        }
        let axis = self.schedule.steps()[step].axis;
        let moving = !self.samples.is_empty();
        let mut diss = 0.0;
        match self.cfg.splitting {
            Splitting::Strang => {
                diss += self.heat.apply(spec, 0.5 * h);
                if moving {
                    self.shear.apply(spec, axis, &self.samples, h);
                }
                diss += self.heat.apply(spec, 0.5 * h);
            }
            Splitting::Lie => {
                if moving {
                    self.shear.apply(spec, axis, &self.samples, h);
                }
                diss += self.heat.apply(spec, h);
            }
        }
        diss
    }

    /// Advance from `t0` to `t1`, calling `on_substep(t, spectrum, dissipated, closes_step)`
    /// after every sub-step.
    pub fn advance(
        &mut self,
        spec: &mut [C64],
        t0: f64,
        t1: f64,
        mut on_substep: impl FnMut(f64, &[C64], f64, bool) -> Result<()>,
    ) -> Result<f64> {
        let horizon = self.schedule.horizon();
        if t1 > horizon * (1.0 + 1e-12) + 1e-12 {
            return Err(MixError::Horizon { t: t1, horizon });
        }
        let mut total = 0.0;
        let mut t = t0;
        let tol = 1e-12 * t1.abs().max(1.0);
        while t < t1 - tol {
            let step = self.schedule.step_index_at(t + tol);
            let step_end = self.schedule.start_of(step) + self.schedule.steps()[step].duration;
            let seg_end = step_end.min(t1);
            let seg = seg_end - t;
            let n_sub = ((seg / self.cfg.dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let h = seg / n_sub as f64;
            let start = t;
            for s in 0..n_sub {
                let d = self.substep(spec, step, h);
                total += d;
                let now = if s + 1 == n_sub { seg_end } else { start + (s + 1) as f64 * h };
                let closes = s + 1 == n_sub && (step_end - seg_end).abs() <= tol;
                on_substep(now, spec, d, closes)?;
            }
            t = seg_end;
        }
        Ok(total)
    }
}

/// Advance `f0` through a shear schedule with operator splitting, recording
/// after every sub-step (sub-steps are at most `config.dt` long).
pub fn advance_schedule(
    f0: &ScalarField,
    schedule: &ShearSchedule,
    config: &SolverConfig,
) -> Result<Trajectory> {
    advance_schedule_until(f0, schedule, config, schedule.horizon())
}

pub fn advance_schedule_until(
    f0: &ScalarField,
    schedule: &ShearSchedule,
    config: &SolverConfig,
    t_end: f64,
) -> Result<Trajectory> {
    check_grid(f0, config.grid)?;
    let mut ev = SplitEvolver::new(schedule.clone(), *config)?;
    let mut spec = f0.spectrum().to_vec();
    let mut rec = Recorder::new(config.grid, config.snapshot_stride, &spec);
    ev.advance(&mut spec, 0.0, t_end, |t, s, d, closes| {
        rec.push(t, s, d);
        if closes {
            rec.step_ends.push(rec.series.len() - 1);
        }
        rec.check_finite()
    })?;
    Ok(rec.finish(config.kappa, spec))
}

/// How the advective term is formed.
enum Advection {
    /// Product in physical space with sampled velocity components.
    Physical {
        u1: Vec<f64>,
        u2: Vec<f64>,
        buf: Vec<C64>,
    },
    /// The cellular velocity has four Fourier modes per component, so the
    /// product is four shifted copies of the spectrum. Identical to the
    /// dealiased physical product whenever the shifted band cannot alias.
    Cellular { amplitude: f64, shifted: ShiftTables },
}

/// The retained band copied into a zero-padded square so that shifted reads
/// need no bounds checks. Two squares alternate as RK stage inputs.
struct ShiftTables {
    modes: Vec<ShiftMode>,
    /// Offsets of the shifts `(K, K)` and `(-K, K)` in the padded square.
    along: usize,
    across: usize,
    /// Class of each mode modulo the lattice spanned by the two shifts; the
    /// advective coupling never leaves a class.
    class: Vec<u16>,
    front: Vec<C64>,
    back: Vec<C64>,
}

#[derive(Clone, Copy)]
struct ShiftMode {
    pos: u32,
    /// `k1 - k2` and `k1 + k2`
    minus: f32,
    plus: f32,
}

impl ShiftTables {
    fn new(active: &[usize], n: usize, cutoff: i64, cells: i64) -> Self {
        let width = (2 * (cutoff + cells) + 1) as usize;
        let origin = cutoff + cells;
        let class = active
            .iter()
            .map(|&i| {
                let (k1, k2) = (freq(i % n, n), freq(i / n, n));
                let (r1, r2) = (k1.rem_euclid(cells), k2.rem_euclid(cells));
                let parity = (k1.div_euclid(cells) + k2.div_euclid(cells)).rem_euclid(2);
                ((r1 * cells + r2) * 2 + parity) as u16
            })
            .collect();
        let modes = active
            .iter()
            .map(|&i| {
                let k1 = freq(i % n, n);
                let k2 = freq(i / n, n);
                ShiftMode {
                    pos: ((origin + k2) as usize * width + (origin + k1) as usize) as u32,
                    minus: (k1 - k2) as f32,
                    plus: (k1 + k2) as f32,
                }
            })
            .collect();
        let k = cells as usize;
        ShiftTables {
            modes,
            along: k * width + k,
            across: k * width - k,
            class,
            front: vec![C64::new(0.0, 0.0); width * width],
            back: vec![C64::new(0.0, 0.0); width * width],
        }
    }

    /// Advective term at mode `m`, read from padded stage input `p`.
    #[inline(always)]
    fn term(p: &[C64], m: ShiftMode, along: usize, across: usize) -> C64 {
        let q = m.pos as usize;
        (p[q - along] - p[q + along]) * m.minus as f64 + (p[q + across] - p[q - across]) * m.plus as f64
    }
}

/// Pseudo-spectral integrator for a time-independent smooth velocity.
///
/// Under dealiasing the state is evolved on the retained band only (stored
/// compactly); modes outside the band see just the heat factor.
pub struct SpectralEvolver {
    cfg: SolverConfig,
    fft: Fft2,
    advection: Advection,
    active: Vec<usize>,
    passive: Vec<usize>,
    /// `2 pi k1`, `2 pi k2`, `|k|^2` and heat factors per active mode
    d1: Vec<f64>,
    d2: Vec<f64>,
    k_sq: Vec<f64>,
    e_half: Vec<f64>,
    e_full: Vec<f64>,
    passive_k_sq: Vec<f64>,
    passive_e_full: Vec<f64>,
    state: Vec<C64>,
    outside: Vec<C64>,
    /// Active modes that can be nonzero given the loaded state (all of them
    /// unless the shifted form shows some classes start and stay at zero).
    live: Vec<u32>,
    /// Passive modes that are nonzero at load time.
    outside_live: Vec<u32>,
    work: [Vec<C64>; 5],
}

impl SpectralEvolver {
    pub fn new(flow: &FlowSpec, cfg: SolverConfig) -> Result<Self> {
        Self::build(flow, cfg, true)
    }

    /// Force the physical-space product even where the shifted form applies.
    pub fn new_physical(flow: &FlowSpec, cfg: SolverConfig) -> Result<Self> {
        Self::build(flow, cfg, false)
    }

    fn build(flow: &FlowSpec, cfg: SolverConfig, allow_shifted: bool) -> Result<Self> {
        cfg.validate()?;
        if !matches!(flow, FlowSpec::Cellular { .. } | FlowSpec::Shear { .. } | FlowSpec::Zero) {
            return Err(MixError::InvalidParameter(format!(
                "pseudo-spectral path needs an autonomous flow, got {}",
                flow.variant_name()
            )));
        }
        let grid = cfg.grid;
        let n = grid.n();
        cfg.check_stability(flow.max_speed(grid, 1.0)?)?;
        let cutoff = match cfg.dealias {
            Dealias::TwoThirds => Some(two_thirds_cutoff(n)),
            Dealias::None => None,
        };
        let inside = |i: usize| {
            cutoff.map_or(true, |c| freq(i % n, n).abs() <= c && freq(i / n, n).abs() <= c)
        };
        let active: Vec<usize> = (0..n * n).filter(|&i| inside(i)).collect();
        let passive: Vec<usize> = (0..n * n).filter(|&i| !inside(i)).collect();

        let advection = match (flow, cutoff) {
            (&FlowSpec::Cellular { a, eps }, Some(c)) if allow_shifted => {
                // validates eps
                flow.velocity_at(0.0, 0.0, 0.0)?;
                let cells = (1.0 / eps).round() as i64;
                if cells + c < n as i64 - c {
                    Some(Advection::Cellular {
                        amplitude: a,
                        shifted: ShiftTables::new(&active, n, c, cells),
                    })
                } else {
                    None
                }
            }
            _ => None,
        };
        let advection = match advection {
            Some(adv) => adv,
            None => {
                let (u1, u2) = flow.sample_velocity(grid, 0.0)?;
                Advection::Physical {
                    u1,
                    u2,
                    buf: vec![C64::new(0.0, 0.0); n * n],
                }
            }
        };

        let heat = |idx: &[usize], h: f64| -> Vec<f64> {
            idx.iter()
                .map(|&i| (-4.0 * PI * PI * cfg.kappa * k_squared(i, n) * h).exp())
                .collect()
        };
        let two_pi = 2.0 * PI;
        let m = active.len();
        Ok(SpectralEvolver {
            e_half: heat(&active, 0.5 * cfg.dt),
            e_full: heat(&active, cfg.dt),
            passive_e_full: heat(&passive, cfg.dt),
            d1: active.iter().map(|&i| two_pi * freq(i % n, n) as f64).collect(),
            d2: active.iter().map(|&i| two_pi * freq(i / n, n) as f64).collect(),
            k_sq: active.iter().map(|&i| k_squared(i, n)).collect(),
            passive_k_sq: passive.iter().map(|&i| k_squared(i, n)).collect(),
            fft: Fft2::new(n),
            advection,
            active,
            passive,
            cfg,
            state: vec![C64::new(0.0, 0.0); m],
            outside: Vec::new(),
            live: (0..m as u32).collect(),
            outside_live: Vec::new(),
            work: std::array::from_fn(|_| vec![C64::new(0.0, 0.0); m]),
        })
    }

    /// `-(u . grad rho)` on the active modes.
    fn rhs(&mut self, input: &[C64], out: &mut [C64]) {
        match &mut self.advection {
            Advection::Physical { u1, u2, buf } => {
                buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                // pack d1 + i d2: both derivative fields are real
                for (j, &i) in self.active.iter().enumerate() {
                    buf[i] = C64::new(-self.d2[j], self.d1[j]) * input[j];
                }
                self.fft.inverse(buf);
                for ((z, a), b) in buf.iter_mut().zip(u1.iter()).zip(u2.iter()) {
                    *z = C64::new(-(a * z.re + b * z.im), 0.0);
                }
                self.fft.forward(buf);
                for (j, &i) in self.active.iter().enumerate() {
                    out[j] = buf[i];
                }
            }
            Advection::Cellular { amplitude, shifted } => {
                let pref = PI * PI * *amplitude;
                let (along, across) = (shifted.along, shifted.across);
                for (m, z) in shifted.modes.iter().zip(input) {
                    shifted.front[m.pos as usize] = *z;
                }
                for (m, o) in shifted.modes.iter().zip(out.iter_mut()) {
                    *o = ShiftTables::term(&shifted.front, *m, along, across) * pref;
                }
            }
        }
        if self.active[0] == 0 {
            out[0] = C64::new(0.0, 0.0);
        }
    }

    fn grad_sq(k_sq: &[f64], v: &[C64]) -> f64 {
        4.0 * PI * PI * v.iter().zip(k_sq).map(|(z, k)| z.norm_sqr() * k).sum::<f64>()
    }

    /// One step on the compact state; returns the trapezoid increment.
    fn step_compact(&mut self, g0: f64) -> (f64, f64) {
        if let Advection::Cellular { .. } = self.advection {
            return self.step_shifted(g0);
        }
        let h = self.cfg.dt;
        let mut w = std::mem::take(&mut self.work);
        let mut v = std::mem::take(&mut self.state);
        let [a, b, c, d, tmp] = &mut w;
        self.rhs(&v, a);
        for j in 0..v.len() {
            tmp[j] = self.e_half[j] * (v[j] + 0.5 * h * a[j]);
        }
        self.rhs(tmp, b);
        for j in 0..v.len() {
            tmp[j] = self.e_half[j] * v[j] + 0.5 * h * b[j];
        }
        self.rhs(tmp, c);
        for j in 0..v.len() {
            tmp[j] = self.e_full[j] * v[j] + h * self.e_half[j] * c[j];
        }
        self.rhs(tmp, d);
        for j in 0..v.len() {
            v[j] = self.e_full[j] * (v[j] + h / 6.0 * a[j])
                + h / 3.0 * self.e_half[j] * (b[j] + c[j])
                + h / 6.0 * d[j];
        }
        let g1 = Self::grad_sq(&self.k_sq, &v);
        self.state = v;
        self.work = w;
        (0.5 * h * (g0 + g1), g1)
    }

    /// [`Self::step_compact`] for the shifted cellular form, with each stage
    /// fused into one pass that writes the next stage input straight into
    /// the other padded square.
    fn step_shifted(&mut self, g0: f64) -> (f64, f64) {
        let h = self.cfg.dt;
        let Advection::Cellular { amplitude, shifted } = &mut self.advection else {
            unreachable!("caller checked the advection form")
        };
        let pref = PI * PI * *amplitude;
        let (along, across) = (shifted.along, shifted.across);
        let modes = &shifted.modes;
        let (front, back) = (&mut shifted.front, &mut shifted.back);
        let v = &mut self.state;
        let acc = &mut self.work[0];
        let (eh, ef) = (&self.e_half, &self.e_full);

        let live = &self.live;
        for &j in live {
            let j = j as usize;
            front[modes[j].pos as usize] = v[j];
        }
        for &j in live {
            let j = j as usize;
            let a = ShiftTables::term(front, modes[j], along, across) * pref;
            acc[j] = ef[j] * (v[j] + h / 6.0 * a);
            back[modes[j].pos as usize] = eh[j] * (v[j] + 0.5 * h * a);
        }
        for &j in live {
            let j = j as usize;
            let b = ShiftTables::term(back, modes[j], along, across) * pref;
            acc[j] += h / 3.0 * eh[j] * b;
            front[modes[j].pos as usize] = eh[j] * v[j] + 0.5 * h * b;
        }
        for &j in live {
            let j = j as usize;
            let c = ShiftTables::term(front, modes[j], along, across) * pref;
            acc[j] += h / 3.0 * eh[j] * c;
            back[modes[j].pos as usize] = ef[j] * v[j] + h * eh[j] * c;
        }
        let mut g1 = 0.0;
        for &j in live {
            let j = j as usize;
            let d = ShiftTables::term(back, modes[j], along, across) * pref;
            v[j] = acc[j] + h / 6.0 * d;
            g1 += v[j].norm_sqr() * self.k_sq[j];
        }
        let g1 = 4.0 * PI * PI * g1;
        (0.5 * h * (g0 + g1), g1)
    }

    /// `steps` integrating-factor RK4 steps of length `dt`, calling
    /// `on_step(step_index, self, dissipated)` after each (the `current_*`
    /// accessors see the state at that point). Returns the trapezoid estimate
    /// of `int ||grad rho||^2` over the interval.
    pub fn advance_steps(
        &mut self,
        spec: &mut [C64],
        steps: usize,
        mut on_step: impl FnMut(usize, &Self, f64) -> Result<bool>,
    ) -> Result<f64> {
        self.load(spec);
        let mut g = self.live_grad_sq();
        let mut g_out = self.outside_grad_sq();
        let mut total = 0.0;
        let mut result = Ok(false);
        for s in 0..steps {
            let (mut d, g1) = self.step_compact(g);
            g = g1;
            if !self.outside_live.is_empty() {
                for &j in &self.outside_live {
                    self.outside[j as usize] *= self.passive_e_full[j as usize];
                }
                let g1_out = self.outside_grad_sq();
                d += 0.5 * self.cfg.dt * (g_out + g1_out);
                g_out = g1_out;
            }
            total += d;
            result = on_step(s, self, d);
            if !matches!(result, Ok(false)) {
                break;
            }
        }
        self.current_spectrum(spec);
        result.map(|_| total)
    }

    /// Copy `spec` in and work out which modes need evolving. Each coupled
    /// class (and each passive mode) evolves independently with a
    /// non-increasing norm, so one whose energy is at roundoff level relative
    /// to the total is dropped; the error this introduces stays at that level.
    fn load(&mut self, spec: &[C64]) {
        const NEGLIGIBLE: f64 = 1e-30;
        for (j, &i) in self.active.iter().enumerate() {
            self.state[j] = spec[i];
        }
        self.outside.clear();
        self.outside.extend(self.passive.iter().map(|&i| spec[i]));
        let floor = NEGLIGIBLE * spec.iter().map(|z| z.norm_sqr()).sum::<f64>();
        self.outside_live.clear();
        for (j, z) in self.outside.iter_mut().enumerate() {
            if z.norm_sqr() > floor {
                self.outside_live.push(j as u32);
            } else {
                *z = C64::new(0.0, 0.0);
            }
        }
        self.live.clear();
        match &self.advection {
            Advection::Cellular { shifted, .. } => {
                let class = &shifted.class;
                let mut energy = vec![0.0; 1 + *class.iter().max().unwrap_or(&0) as usize];
                for (z, &c) in self.state.iter().zip(class) {
                    energy[c as usize] += z.norm_sqr();
                }
                for (j, &c) in class.iter().enumerate() {
                    if energy[c as usize] > floor {
                        self.live.push(j as u32);
                    } else {
                        self.state[j] = C64::new(0.0, 0.0);
                    }
                }
            }
            Advection::Physical { .. } => self.live.extend(0..self.active.len() as u32),
        }
    }

    fn live_grad_sq(&self) -> f64 {
        4.0 * PI
            * PI
            * self
                .live
                .iter()
                .map(|&j| self.state[j as usize].norm_sqr() * self.k_sq[j as usize])
                .sum::<f64>()
    }

    fn outside_grad_sq(&self) -> f64 {
        4.0 * PI
            * PI
            * self
                .outside_live
                .iter()
                .map(|&j| self.outside[j as usize].norm_sqr() * self.passive_k_sq[j as usize])
                .sum::<f64>()
    }

    /// First time the `L2` norm of `spec` evolved from `t = 0` drops to
    /// `target`, interpolated log-linearly within the step; `(horizon, true)`
    /// if it never does. `spec` is left at the stopping state.
    pub fn halving(&mut self, spec: &mut [C64], target: f64, horizon: f64) -> Result<(f64, bool)> {
        let dt = self.cfg.dt;
        let steps = (horizon / dt).ceil() as usize;
        let mut prev = spec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut hit = None;
        self.advance_steps(spec, steps, |s, ev, _| {
            let l = ev.current_l2();
            if !l.is_finite() {
                return Err(MixError::NonFinite { t: (s + 1) as f64 * dt });
            }
            if l <= target {
                let (t0, t1) = (s as f64 * dt, (s + 1) as f64 * dt);
                hit = Some(if l <= 0.0 || prev <= target || prev == l {
                    t1
                } else {
                    t0 + dt * (prev.ln() - target.ln()) / (prev.ln() - l.ln())
                });
                return Ok(true);
            }
            prev = l;
            Ok(false)
        })?;
        Ok(match hit {
            Some(t) => (t, false),
            None => (horizon, true),
        })
    }

    /// Write the current state into a full spectrum.
    pub fn current_spectrum(&self, out: &mut [C64]) {
        for (j, &i) in self.active.iter().enumerate() {
            out[i] = self.state[j];
        }
        for (z, &i) in self.outside.iter().zip(&self.passive) {
            out[i] = *z;
        }
    }

    /// Current `(L2^2, H^-1^2, H^1^2)`.
    pub fn current_norms_sq(&self) -> (f64, f64, f64) {
        let (mut l2, mut hm1, mut h1) = (0.0, 0.0, 0.0);
        let live = self.live.iter().map(|&j| (self.state[j as usize], self.k_sq[j as usize]));
        let out = self
            .outside_live
            .iter()
            .map(|&j| (self.outside[j as usize], self.passive_k_sq[j as usize]));
        for (z, k) in live.chain(out) {
            let e = z.norm_sqr();
            l2 += e;
            if k > 0.0 {
                hm1 += e / k;
                h1 += e * k;
            }
        }
        (l2, hm1, h1)
    }

    pub fn current_l2(&self) -> f64 {
        self.current_norms_sq().0.sqrt()
    }

    /// One step on a full spectrum.
    pub fn step(&mut self, spec: &mut [C64]) -> f64 {
        self.advance_steps(spec, 1, |_, _, _| Ok(false)).expect("no callback error")
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }
}

/// Pseudo-spectral evolution of a smooth autonomous flow up to `t_end`
/// (rounded up to whole RK4 steps of `config.dt`).
pub fn advance_autonomous(
    f0: &ScalarField,
    flow: &FlowSpec,
    t_end: f64,
    config: &SolverConfig,
) -> Result<Trajectory> {
    check_grid(f0, config.grid)?;
    let mut ev = SpectralEvolver::new(flow, *config)?;
    let mut spec = f0.spectrum().to_vec();
    let mut rec = Recorder::new(config.grid, config.snapshot_stride, &spec);
    let n_steps = ((t_end / config.dt) * (1.0 - 1e-12)).ceil() as usize;
    let dt = config.dt;
    ev.advance_steps(&mut spec, n_steps, |s, ev, d| {
        let t = (s + 1) as f64 * dt;
        rec.push_norms(t, ev.current_norms_sq(), d, || {
            let mut full = vec![C64::new(0.0, 0.0); config.grid.len()];
            ev.current_spectrum(&mut full);
            full
        });
        rec.check_finite().map(|_| false)
    })?;
    Ok(rec.finish(config.kappa, spec))
}

/// Either integrator behind one interface, for diagnostics that need to
/// restart from intermediate states.
pub enum Evolver {
    Split(SplitEvolver),
    Spectral(SpectralEvolver),
}

impl Evolver {
    /// Split path for schedule-based flows, pseudo-spectral for the cellular flow.
    pub fn for_flow(flow: &FlowSpec, cfg: SolverConfig, horizon: f64) -> Result<Self> {
        match flow.schedule(horizon, cfg.grid)? {
            Some(s) => Ok(Evolver::Split(SplitEvolver::new(s, cfg)?)),
            None => Ok(Evolver::Spectral(SpectralEvolver::new(flow, cfg)?)),
        }
    }

    /// Natural recording interval.
    pub fn base_step(&self) -> f64 {
        match self {
            Evolver::Split(e) => e.cfg.dt,
            Evolver::Spectral(e) => e.dt(),
        }
    }

    /// Advance the spectrum from `t0` to `t1`, returning `int ||grad rho||^2`.
    /// The pseudo-spectral path rounds the interval to whole steps.
    pub fn advance(&mut self, spec: &mut [C64], t0: f64, t1: f64) -> Result<f64> {
        match self {
            Evolver::Split(e) => {
                let horizon = e.schedule().horizon();
                if t1 > horizon * (1.0 + 1e-12) + 1e-12 {
                    return Err(MixError::Horizon { t: t1, horizon });
                }
                e.advance(spec, t0, t1, |t, s, _, _| {
                    if s[0].re.is_finite() && s.iter().take(4).all(|z| z.re.is_finite()) {
                        Ok(())
                    } else {
                        Err(MixError::NonFinite { t })
                    }
                })
            }
            Evolver::Spectral(e) => {
                let steps = ((t1 - t0) / e.dt()).round().max(0.0) as usize;
                let d = e.advance_steps(spec, steps, |_, _, _| Ok(false))?;
                if !d.is_finite() {
                    return Err(MixError::NonFinite { t: t1 });
                }
                Ok(d)
            }
        }
    }
}

/// Advance with whichever path suits `flow`.
pub fn advance_flow(
    f0: &ScalarField,
    flow: &FlowSpec,
    t_end: f64,
    config: &SolverConfig,
) -> Result<Trajectory> {
    match flow.schedule(t_end, config.grid)? {
        Some(s) => advance_schedule_until(f0, &s, config, t_end),
        None => advance_autonomous(f0, flow, t_end, config),
    }
}
