//! Advected parabolic–elliptic Keller–Segel system with unit diffusivity:
//! `d_t n + u . grad n - lap n = -div(n chi grad c)`, `-lap c = n - n_bar`,
//! evolved as `theta = n - n_bar`.
//!
//! Each step is Strang split: exact shear for `h/2`, integrating-factor RK4
//! for diffusion plus the dealiased chemotactic flux over `h`, exact shear
//! for `h/2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{MixError, Result};
use crate::field::{Grid, ScalarField};
use crate::flows::FlowSpec;
use crate::solver::{Recorder, ShearKernel, Trajectory};
use crate::spectral::{conj_index, freq, two_thirds_cutoff, Fft2, C64};

#[derive(Debug, Clone)]
pub struct KsState {
    /// `n - n_bar`, mean zero
    pub theta: ScalarField,
    pub n_bar: f64,
    pub chi: f64,
}

impl KsState {
    /// Split a density into mean and deviation.
    pub fn from_density(density: &ScalarField, chi: f64) -> Result<Self> {
        let n_bar = density.mean();
        if !(n_bar > 0.0) {
            return Err(MixError::InvalidParameter(format!(
                "mean density {n_bar} must be positive"
            )));
        }
        if !(chi > 0.0) {
            return Err(MixError::InvalidParameter(format!("chi = {chi} must be positive")));
        }
        let mut spec = density.spectrum().to_vec();
        spec[0] = C64::new(0.0, 0.0);
        Ok(KsState {
            theta: ScalarField::from_spectrum(density.grid(), spec)?,
            n_bar,
            chi,
        })
    }

    pub fn density_values(&self) -> Vec<f64> {
        self.theta.values().iter().map(|v| v + self.n_bar).collect()
    }
}

/// Mass `n_bar` concentrated in a periodized Gaussian of width `width`
/// centred at `(0.5, 0.5)`.
pub fn gaussian_bump(grid: Grid, n_bar: f64, width: f64) -> Result<ScalarField> {
    if !(width > 0.0) || !(n_bar > 0.0) {
        return Err(MixError::InvalidParameter(format!(
            "need width > 0 and n_bar > 0 (got {width}, {n_bar})"
        )));
    }
    let g1 = |x: f64| -> f64 {
        (-3..=3)
            .map(|m| (-(x - 0.5 + m as f64).powi(2) / (2.0 * width * width)).exp())
            .sum()
    };
    let bump = ScalarField::from_fn(grid, |x1, x2| g1(x1) * g1(x2));
    let scale = n_bar / bump.mean();
    Ok(ScalarField::from_fn(grid, |x1, x2| scale * g1(x1) * g1(x2)))
}

/// `c` with `-lap c = theta`: `c_k = theta_k / (4 pi^2 |k|^2)`, `c_0 = 0`.
pub fn chemoattractant_solve(theta: &ScalarField) -> ScalarField {
    let n = theta.grid().n();
    let spec = theta
        .spectrum()
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let k2 = crate::spectral::k_squared(i, n);
            if k2 == 0.0 {
                C64::new(0.0, 0.0)
            } else {
                z / (4.0 * PI * PI * k2)
            }
        })
        .collect();
    ScalarField::from_spectrum_unchecked(theta.grid(), spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsConfig {
    /// Largest step; steps shrink with the chemotactic rate and end on
    /// schedule boundaries.
    pub dt: f64,
    /// Blow-up when the density maximum exceeds `density_factor * n_bar`.
    #[serde(default = "default_density_factor")]
    pub density_factor: f64,
    /// Blow-up when this fraction of the energy of `theta` sits in the top
    /// third (per axis) of the dealiased band.
    #[serde(default = "default_tail_threshold")]
    pub tail_threshold: f64,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

fn default_density_factor() -> f64 {
    1e3
}

fn default_tail_threshold() -> f64 {
    0.2
}

fn default_stride() -> usize {
    usize::MAX
}

impl KsConfig {
    pub fn new(dt: f64) -> Self {
        KsConfig {
            dt,
            density_factor: default_density_factor(),
            tail_threshold: default_tail_threshold(),
            snapshot_stride: default_stride(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.density_factor > 1.0) || !(self.tail_threshold > 0.0) {
            return Err(MixError::InvalidParameter(format!("bad Keller-Segel config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsRecord {
    pub t: f64,
    pub l2_theta: f64,
    pub max_density: f64,
    pub min_density: f64,
    pub tail_fraction: f64,
    pub blowup: bool,
}

#[derive(Debug, Clone)]
pub struct KsRun {
    pub trajectory: Trajectory,
    pub series: Vec<KsRecord>,
    pub blowup: bool,
    pub blowup_time: Option<f64>,
    pub n_bar: f64,
}

impl KsRun {
    pub fn sup_l2(&self) -> f64 {
        self.series.iter().map(|r| r.l2_theta).fold(0.0, f64::max)
    }
}

/// Spectral workspace for the chemotactic flux.
struct Flux {
    n: usize,
    fft: Fft2,
    cutoff: i64,
    /// `2 pi k1`, `2 pi k2`, `4 pi^2 |k|^2`
    d1: Vec<f64>,
    d2: Vec<f64>,
    lap: Vec<f64>,
    inside: Vec<bool>,
    grad: Vec<C64>,
    dens: Vec<C64>,
    /// largest `|n|` and `|grad c|` seen in the last evaluation
    max_density: f64,
    max_drift: f64,
}

impl Flux {
    fn new(n: usize) -> Self {
        let cutoff = two_thirds_cutoff(n);
        let kk = |i: usize| (freq(i % n, n), freq(i / n, n));
        let d1 = (0..n * n).map(|i| 2.0 * PI * kk(i).0 as f64).collect();
        let d2 = (0..n * n).map(|i| 2.0 * PI * kk(i).1 as f64).collect();
        let lap = (0..n * n)
            .map(|i| 4.0 * PI * PI * crate::spectral::k_squared(i, n))
            .collect();
        let inside = (0..n * n)
            .map(|i| kk(i).0.abs() <= cutoff && kk(i).1.abs() <= cutoff)
            .collect();
        Flux {
            n,
            fft: Fft2::new(n),
            cutoff,
            d1,
            d2,
            lap,
            inside,
            grad: vec![C64::new(0.0, 0.0); n * n],
            dens: vec![C64::new(0.0, 0.0); n * n],
            max_density: 0.0,
            max_drift: 0.0,
        }
    }

    /// `-chi div((theta + n_bar) grad c)` on the dealiased band.
    fn eval(&mut self, theta: &[C64], n_bar: f64, chi: f64, out: &mut [C64]) {
        let zero = C64::new(0.0, 0.0);
        for i in 0..theta.len() {
            if self.inside[i] && i != 0 {
                let z = theta[i];
                let c = z / self.lap[i];
                // i d1 c + i (i d2 c): real part is d1 c, imaginary part d2 c
                self.grad[i] = C64::new(-self.d2[i], self.d1[i]) * c;
                self.dens[i] = z;
            } else {
                self.grad[i] = zero;
                self.dens[i] = zero;
            }
        }
        self.dens[0] = C64::new(n_bar, 0.0);
        self.fft.inverse(&mut self.grad);
        self.fft.inverse(&mut self.dens);
        let (mut md, mut mg) = (0.0f64, 0.0f64);
        for (g, d) in self.grad.iter_mut().zip(&self.dens) {
            let rho = d.re;
            md = md.max(rho.abs());
            mg = mg.max(g.norm());
            *g *= rho;
        }
        self.max_density = md;
        self.max_drift = mg;
        self.fft.forward(&mut self.grad);
        let n = self.n;
        for i in 0..theta.len() {
            if self.inside[i] && i != 0 {
                let p = self.grad[i];
                let q = self.grad[conj_index(i % n, n) + n * conj_index(i / n, n)].conj();
                let f1 = (p + q) * 0.5;
                let f2 = (p - q) * C64::new(0.0, -0.5);
                out[i] = -chi * C64::new(0.0, 1.0) * (self.d1[i] * f1 + self.d2[i] * f2);
            } else {
                out[i] = zero;
            }
        }
    }

    /// Energy fraction of `theta` in the top third of the dealiased band.
    fn tail_fraction(&self, theta: &[C64]) -> f64 {
        let n = self.n;
        let edge = 2 * self.cutoff / 3;
        let (mut tail, mut total) = (0.0, 0.0);
        for (i, z) in theta.iter().enumerate() {
            let e = z.norm_sqr();
            total += e;
            if freq(i % n, n).abs().max(freq(i / n, n).abs()) > edge {
                tail += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            tail / total
        }
    }
}

/// Evolve to `t_end` or the first blow-up signal. The flow must expand into
/// a shear schedule (or be zero); its velocity is multiplied by
/// `amplitude_scale`.
pub fn ks_advance(
    state: &KsState,
    flow: &FlowSpec,
    amplitude_scale: f64,
    t_end: f64,
    config: &KsConfig,
) -> Result<KsRun> {
    config.validate()?;
    if !(t_end > 0.0) || !(amplitude_scale >= 0.0) {
        return Err(MixError::InvalidParameter(format!(
            "need t_end > 0 and amplitude_scale >= 0 (got {t_end}, {amplitude_scale})"
        )));
    }
    let grid = state.theta.grid();
    let n = grid.n();
    let schedule = flow.schedule(t_end, grid)?.ok_or_else(|| {
        MixError::InvalidParameter(format!(
            "Keller-Segel runs need a shear-based flow, got {}",
            flow.variant_name()
        ))
    })?;
    let (n_bar, chi) = (state.n_bar, state.chi);
    let mut flux = Flux::new(n);
    let mut shear = ShearKernel::new(n);
    let mut spec = state.theta.spectrum().to_vec();
    spec[0] = C64::new(0.0, 0.0);
    let mut rec = Recorder::new(grid, config.snapshot_stride, &spec);
    let mut series = Vec::new();

    let mut stage = vec![vec![C64::new(0.0, 0.0); n * n]; 5];
    let mut e_half = vec![0.0; n * n];
    let mut e_full = vec![0.0; n * n];
    let mut last_h = f64::NAN;
    let grad_sq = |s: &[C64], lap: &[f64]| -> f64 {
        s.iter().zip(lap).map(|(z, l)| z.norm_sqr() * l).sum()
    };

    // initial diagnostics come from one flux evaluation
    flux.eval(&spec, n_bar, chi, &mut stage[0]);
    let mut phys_fft = Fft2::new(n);
    let mut phys = vec![C64::new(0.0, 0.0); n * n];
    let mut record = |t: f64, spec: &[C64], flux: &Flux, series: &mut Vec<KsRecord>| -> KsRecord {
        phys.copy_from_slice(spec);
        phys_fft.inverse(&mut phys);
        let (lo, hi) = phys
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), z| (a.min(z.re), b.max(z.re)));
        let l2 = spec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let tail = flux.tail_fraction(spec);
        let max_density = hi + n_bar;
        let blowup = !(l2.is_finite() && max_density.is_finite())
            || max_density > config.density_factor * n_bar
            || tail > config.tail_threshold;
        let r = KsRecord {
            t,
            l2_theta: l2,
            max_density,
            min_density: lo + n_bar,
            tail_fraction: tail,
            blowup,
        };
        series.push(r);
        r
    };
    let first = record(0.0, &spec, &flux, &mut series);
    let mut blowup_time = first.blowup.then_some(0.0);

    let mut t = 0.0;
    let mut g_prev = grad_sq(&spec, &flux.lap);
    'outer: for (si, step) in schedule.steps().iter().enumerate() {
        let start = schedule.start_of(si);
        let end = (start + step.duration).min(t_end);
        if end <= t {
            continue;
        }
        let samples: Vec<f64> = step
            .profile
            .sample(n, step.phase)
            .into_iter()
            .map(|v| v * amplitude_scale)
            .collect();
        let moving = amplitude_scale > 0.0 && !step.profile.is_zero();
        while t < end - 1e-12 * end.max(1.0) {
            if blowup_time.is_some() {
                break 'outer;
            }
            // explicit part: growth rate chi * max n and drift chi |grad c|
            let rate = chi * flux.max_density + chi * flux.max_drift * 2.0 * PI * flux.cutoff as f64;
            let mut h = config.dt.min(0.5 / rate.max(1e-300)).min(end - t);
            if end - t - h < 1e-9 * h {
                h = end - t;
            }
            if h != last_h {
                for i in 0..n * n {
                    e_half[i] = (-0.5 * flux.lap[i] * h).exp();
                    e_full[i] = (-flux.lap[i] * h).exp();
                }
                last_h = h;
            }
            if moving {
                shear.apply(&mut spec, step.axis, &samples, 0.5 * h);
            }
            let [a, b, c, d, tmp] = &mut stage[..] else { unreachable!() };
            flux.eval(&spec, n_bar, chi, a);
            for i in 0..n * n {
                tmp[i] = e_half[i] * (spec[i] + 0.5 * h * a[i]);
            }
            flux.eval(tmp, n_bar, chi, b);
            for i in 0..n * n {
                tmp[i] = e_half[i] * spec[i] + 0.5 * h * b[i];
            }
            flux.eval(tmp, n_bar, chi, c);
            for i in 0..n * n {
                tmp[i] = e_full[i] * spec[i] + h * e_half[i] * c[i];
            }
            flux.eval(tmp, n_bar, chi, d);
            for i in 0..n * n {
                spec[i] = e_full[i] * (spec[i] + h / 6.0 * a[i])
                    + h / 3.0 * e_half[i] * (b[i] + c[i])
                    + h / 6.0 * d[i];
            }
            if moving {
                shear.apply(&mut spec, step.axis, &samples, 0.5 * h);
            }
            spec[0] = C64::new(0.0, 0.0);
            t += h;
            let g = grad_sq(&spec, &flux.lap);
            rec.push(t, &spec, 0.5 * h * (g + g_prev));
            g_prev = g;
            // refresh the explicit-rate estimate at the new state
            flux.eval(&spec, n_bar, chi, &mut stage[0]);
            let r = record(t, &spec, &flux, &mut series);
            if r.blowup {
                blowup_time = Some(t);
            }
        }
    }
    let blowup = blowup_time.is_some();
    if !blowup {
        rec.check_finite()?;
    }
    Ok(KsRun {
        trajectory: rec.finish(1.0, spec),
        series,
        blowup,
        blowup_time,
        n_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{l2_norm, project_mean_zero};
    use crate::spectral::k_squared;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn single_mode_inversion() {
        let g = grid(32);
        let c = chemoattractant_solve(&ScalarField::sin_mode(g, 1, 0, 1.0));
        let want = ScalarField::sin_mode(g, 1, 0, 1.0 / (4.0 * PI * PI));
        let err = c.values().iter().zip(want.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-15);
        let z = chemoattractant_solve(&ScalarField::zeros(g));
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn laplacian_of_solution_reproduces_input() {
        let g = grid(64);
        let theta = project_mean_zero(&ScalarField::random_band_limited(g, 8, 12).unwrap());
        let c = chemoattractant_solve(&theta);
        let n = g.n();
        let resid: f64 = c
            .spectrum()
            .iter()
            .zip(theta.spectrum())
            .enumerate()
            .map(|(i, (ci, ti))| (ci * 4.0 * PI * PI * k_squared(i, n) - ti).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(resid <= 1e-12 * l2_norm(&theta), "{resid}");
    }

    #[test]
    fn flux_matches_finite_difference_oracle() {
        // -div(n grad c) with theta = a sin(2 pi x1): n = n_bar + theta,
        // grad c = (a cos(2 pi x1) / (2 pi), 0), so
        // -div = -(d/dx1)[(n_bar + a s) a c / (2 pi)] = n_bar a s + a^2 (s^2 - c^2)
        let g = grid(32);
        let (a, n_bar, chi) = (0.3, 2.0, 1.5);
        let theta = ScalarField::sin_mode(g, 1, 0, a);
        let mut flux = Flux::new(32);
        let mut out = vec![C64::new(0.0, 0.0); 32 * 32];
        flux.eval(theta.spectrum(), n_bar, chi, &mut out);
        let got = ScalarField::from_spectrum_unchecked(g, out);
        let want = ScalarField::from_fn(g, |x1, _| {
            let (s, c) = (2.0 * PI * x1).sin_cos();
            chi * (n_bar * a * s + a * a * (s * s - c * c))
        });
        let err = got.values().iter().zip(want.values()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn subcritical_decays_monotonically_and_conserves_mass() {
        let g = grid(64);
        let density = gaussian_bump(g, 1.0, 0.1).unwrap();
        let state = KsState::from_density(&density, 0.1).unwrap();
        let run = ks_advance(&state, &FlowSpec::Zero, 0.0, 0.5, &KsConfig::new(1e-3)).unwrap();
        assert!(!run.blowup);
        for w in run.series.windows(2) {
            assert!(w[1].l2_theta <= w[0].l2_theta * (1.0 + 1e-12));
        }
        let mean = run.trajectory.final_field.mean();
        assert!(mean.abs() < 1e-10);
        assert!(run.series.iter().all(|r| r.min_density > -1e-8));
    }

    #[test]
    fn mass_conserved_under_shear() {
        let g = grid(64);
        let density = gaussian_bump(g, 5.0, 0.1).unwrap();
        let state = KsState::from_density(&density, 1.0).unwrap();
        let flow = FlowSpec::PierrehumbertRandom { tau: 0.05, seed: 2, amplitude: 1.0 };
        let run = ks_advance(&state, &flow, 3.0, 0.2, &KsConfig::new(1e-3)).unwrap();
        for s in &run.trajectory.snapshots {
            assert!(s.field.mean().abs() < 1e-10);
        }
        assert!(run.trajectory.final_field.mean().abs() < 1e-10);
    }

    #[test]
    fn bump_normalization() {
        let b = gaussian_bump(grid(128), 7.0, 0.05).unwrap();
        assert!((b.mean() - 7.0).abs() < 1e-12);
        // the far tail is below roundoff
        assert!(b.values().iter().all(|&v| v > -1e-12));
    }

    #[test]
    fn rejects_cellular_flow() {
        let g = grid(32);
        let state = KsState::from_density(&gaussian_bump(g, 1.0, 0.1).unwrap(), 1.0).unwrap();
        let flow = FlowSpec::Cellular { a: 1.0, eps: 0.25 };
        assert!(ks_advance(&state, &flow, 1.0, 0.1, &KsConfig::new(1e-3)).is_err());
    }
}
