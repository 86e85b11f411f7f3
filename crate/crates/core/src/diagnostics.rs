//! Observables extracted from trajectories: decay fits, dissipation times,
//! energy balance and dissipated fractions.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{MixError, Result};
use crate::field::{
    project_mean_zero, project_zero_x1_average, project_zero_x2_average, Grid, ScalarField,
};
use crate::flows::{Axis, FlowSpec};
use crate::solver::{Evolver, SolverConfig, Trajectory};
use crate::spectral::C64;

/// Fits need at least this many samples for `r_squared` to be reported.
pub const MIN_SAMPLES_FOR_R2: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Power,
    Exponential,
}

/// Inclusive time window; `None` bounds are open.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Window {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

impl Window {
    pub fn all() -> Self {
        Window::default()
    }

    pub fn between(t_min: f64, t_max: f64) -> Self {
        Window {
            t_min: Some(t_min),
            t_max: Some(t_max),
        }
    }

    pub fn from(t_min: f64) -> Self {
        Window {
            t_min: Some(t_min),
            t_max: None,
        }
    }

    fn contains(&self, t: f64) -> bool {
        self.t_min.map_or(true, |a| t >= a) && self.t_max.map_or(true, |b| t <= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: FitKind,
    /// Slope for power laws; decay rate (minus the slope) for exponentials.
    pub exponent_or_rate: f64,
    pub intercept: f64,
    pub r_squared: Option<f64>,
    pub t_min: f64,
    pub t_max: f64,
    pub n_samples: usize,
    pub stderr: f64,
    /// 95% confidence interval of `exponent_or_rate`.
    pub ci_low: f64,
    pub ci_high: f64,
}

struct Line {
    slope: f64,
    intercept: f64,
    r2: f64,
    stderr: f64,
}

fn least_squares(x: &[f64], y: &[f64]) -> Line {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = (syy - slope * sxy).max(0.0);
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 1.0 };
    let stderr = if x.len() > 2 {
        (sse / (m - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Line {
        slope,
        intercept,
        r2,
        stderr,
    }
}

fn fit(series: &[(f64, f64)], window: Window, kind: FitKind) -> Result<FitResult> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| window.contains(t))
        .collect();
    if pts.len() < 2 {
        return Err(MixError::Fit(format!(
            "window holds {} samples, need at least 2",
            pts.len()
        )));
    }
    if let Some(&(t, v)) = pts.iter().find(|&&(_, v)| !(v > 0.0)) {
        return Err(MixError::Fit(format!("nonpositive value {v} at t = {t}")));
    }
    if kind == FitKind::Power {
        if let Some(&(t, _)) = pts.iter().find(|&&(t, _)| !(t > 0.0)) {
            return Err(MixError::Fit(format!("power-law fit needs t > 0, got {t}")));
        }
    }
    let x: Vec<f64> = pts
        .iter()
        .map(|&(t, _)| if kind == FitKind::Power { t.ln() } else { t })
        .collect();
    let y: Vec<f64> = pts.iter().map(|&(_, v)| v.ln()).collect();
    let line = least_squares(&x, &y);
    let value = match kind {
        FitKind::Power => line.slope,
        FitKind::Exponential => -line.slope,
    };
    let half_width = if pts.len() > 2 && line.stderr.is_finite() {
        let t = StudentsT::new(0.0, 1.0, (pts.len() - 2) as f64)
            .map_err(|e| MixError::Fit(e.to_string()))?;
        t.inverse_cdf(0.975) * line.stderr
    } else {
        f64::NAN
    };
    Ok(FitResult {
        kind,
        exponent_or_rate: value,
        intercept: line.intercept,
        r_squared: (pts.len() >= MIN_SAMPLES_FOR_R2).then_some(line.r2),
        t_min: pts[0].0,
        t_max: pts[pts.len() - 1].0,
        n_samples: pts.len(),
        stderr: line.stderr,
        ci_low: value - half_width,
        ci_high: value + half_width,
    })
}

/// Least squares on `(ln t, ln value)`; the exponent is the slope.
pub fn fit_power_law(series: &[(f64, f64)], window: Window) -> Result<FitResult> {
    fit(series, window, FitKind::Power)
}

/// Least squares on `(t, ln value)`; the rate is minus the slope.
pub fn fit_exponential(series: &[(f64, f64)], window: Window) -> Result<FitResult> {
    fit(series, window, FitKind::Exponential)
}

/// `max_t |l2(t)^2 - l2(0)^2 + 2 kappa cum(t)| / l2(0)^2`.
pub fn energy_balance_residual(traj: &Trajectory, kappa: f64) -> f64 {
    let e0 = traj.first().l2.powi(2);
    if e0 == 0.0 {
        return 0.0;
    }
    traj.series
        .iter()
        .map(|r| (r.l2 * r.l2 - e0 + 2.0 * kappa * r.cum_dissipation).abs() / e0)
        .fold(0.0, f64::max)
}

/// Fraction of the initial energy gone at the final time.
pub fn dissipated_fraction(traj: &Trajectory) -> f64 {
    let e0 = traj.first().l2.powi(2);
    if e0 == 0.0 {
        return 0.0;
    }
    ((e0 - traj.last().l2.powi(2)) / e0).clamp(0.0, 1.0)
}

/// `||f||_{H^1} ||f||_{H^-1} / ||f||_{L2}^2` along the trajectory; at least 1
/// by interpolation.
pub fn hminus1_growth_ratio(traj: &Trajectory) -> Result<Vec<(f64, f64)>> {
    traj.series
        .iter()
        .map(|r| {
            if r.l2 == 0.0 {
                Err(MixError::ZeroField("growth ratio of a zero state"))
            } else {
                Ok((r.t, r.h1 * r.h_minus_1 / (r.l2 * r.l2)))
            }
        })
        .collect()
}

/// A named initial datum for [`dissipation_time`].
#[derive(Debug, Clone)]
pub struct Probe {
    pub id: String,
    pub field: ScalarField,
}

/// Lowest modes `(1,0), (1,1), (2,0), (2,1)` and three random band-limited fields.
pub fn default_probes(grid: Grid, seed: u64) -> Vec<Probe> {
    let mut probes: Vec<Probe> = [(1, 0), (1, 1), (2, 0), (2, 1)]
        .iter()
        .map(|&(k1, k2)| Probe {
            id: format!("mode({k1},{k2})"),
            field: ScalarField::sin_mode(grid, k1, k2, 1.0),
        })
        .collect();
    for r in 0..3u64 {
        let s = seed.wrapping_add(r);
        probes.push(Probe {
            id: format!("random(seed={s},band=4)"),
            field: ScalarField::random_band_limited(grid, s, 4).expect("band fits any grid"),
        });
    }
    probes
}

/// Probes concentrated in a layer of width `~ kappa^{1/4}` around the
/// critical points of a shear, where enhanced dissipation is slowest.
pub fn critical_layer_probes(grid: Grid, profile_axis: Axis, critical: &[f64], kappa: f64) -> Vec<Probe> {
    let width = (0.5 * kappa.powf(0.25)).max(2.0 * grid.spacing()).min(0.25);
    critical
        .iter()
        .map(|&xc| {
            let bump = |y: f64| {
                (-2..=2)
                    .map(|w| {
                        let d = y - xc + w as f64;
                        (-0.5 * d * d / (width * width)).exp()
                    })
                    .sum::<f64>()
            };
            let field = match profile_axis {
                Axis::X1 => ScalarField::from_fn(grid, |x1, x2| (2.0 * PI * x1).sin() * bump(x2)),
                Axis::X2 => ScalarField::from_fn(grid, |x1, x2| (2.0 * PI * x2).sin() * bump(x1)),
            };
            Probe {
                id: format!("layer(x={xc},width={width:.4})"),
                field,
            }
        })
        .collect()
}

/// Default probes, plus critical-layer probes when `flow` is a single shear.
pub fn probes_for_flow(flow: &FlowSpec, grid: Grid, seed: u64, kappa: f64) -> Vec<Probe> {
    let mut probes = default_probes(grid, seed);
    if let FlowSpec::Shear { profile, axis } = flow {
        probes.extend(critical_layer_probes(grid, *axis, &profile.critical_points(), kappa));
    }
    probes
}

/// Prepare a probe for `flow`: mean removed and, for a single shear, the part
/// constant on streamlines removed too (it only feels plain diffusion).
pub fn adapt_probe(flow: &FlowSpec, f: &ScalarField) -> ScalarField {
    let f = project_mean_zero(f);
    match flow {
        FlowSpec::Shear { axis: Axis::X1, .. } => project_zero_x1_average(&f),
        FlowSpec::Shear { axis: Axis::X2, .. } => project_zero_x2_average(&f),
        _ => f,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdisOptions {
    /// Give up (and report a lower bound) after this time.
    pub horizon: f64,
    /// Fine sub-steps per coarse step inside the bracketing interval.
    pub refine: usize,
}

impl TdisOptions {
    /// Horizon from the Poincare bound: no mean-zero state takes longer than
    /// `ln 2 / (4 pi^2 kappa)` to halve.
    pub fn for_kappa(kappa: f64, dt: f64) -> Self {
        TdisOptions {
            horizon: (2f64.ln() / (4.0 * PI * PI * kappa)) * 1.01 + 2.0 * dt,
            refine: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHalving {
    pub id: String,
    pub t_half: f64,
    pub lower_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationTimeEstimate {
    pub t_dis: f64,
    pub probe_count: usize,
    pub worst_probe: String,
    /// Some probe hit the horizon: `t_dis` is only a lower bound.
    pub lower_bound: bool,
    pub probes: Vec<ProbeHalving>,
}

/// First time `l2` halves, with log-linear interpolation of the crossing.
fn crossing(t0: f64, l0: f64, t1: f64, l1: f64, target: f64) -> f64 {
    if l1 <= 0.0 || l0 <= target {
        return t0;
    }
    let (a, b) = (l0.ln(), l1.ln());
    if a == b {
        return t1;
    }
    t0 + (t1 - t0) * (a - target.ln()) / (a - b)
}

fn spec_l2(spec: &[C64]) -> f64 {
    spec.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn halving_time(
    flow: &FlowSpec,
    probe: &ScalarField,
    config: &SolverConfig,
    opts: &TdisOptions,
) -> Result<(f64, bool)> {
    let horizon = opts.horizon;
    let mut coarse = Evolver::for_flow(flow, *config, horizon)?;
    let dt = coarse.base_step();
    let mut spec = probe.spectrum().to_vec();
    let l_init = spec_l2(&spec);
    if l_init == 0.0 {
        return Err(MixError::ZeroField("dissipation-time probe"));
    }
    let target = 0.5 * l_init;
    if let Evolver::Spectral(ev) = &mut coarse {
        // steps are already fine enough that no refinement is needed
        return ev.halving(&mut spec, target, horizon);
    }
    let mut t = 0.0;
    let mut l = l_init;
    loop {
        let t_next = (t + dt).min(horizon);
        if t_next <= t {
            return Ok((horizon, true));
        }
        let saved = spec.clone();
        coarse.advance(&mut spec, t, t_next)?;
        let l_next = spec_l2(&spec);
        if l_next <= target {
            let refine = opts.refine.max(1);
            if refine == 1 {
                return Ok((crossing(t, l, t_next, l_next, target), false));
            }
            let mut fine_cfg = *config;
            fine_cfg.dt = (t_next - t) / refine as f64;
            let mut fine = Evolver::for_flow(flow, fine_cfg, horizon)?;
            let mut s = saved;
            let (mut a, mut la) = (t, l);
            for i in 1..=refine {
                let b = if i == refine { t_next } else { t + i as f64 * fine_cfg.dt };
                fine.advance(&mut s, a, b)?;
                let lb = spec_l2(&s);
                if lb <= target {
                    return Ok((crossing(a, la, b, lb, target), false));
                }
                a = b;
                la = lb;
            }
            // the fine path just missed the threshold the coarse one crossed
            return Ok((crossing(t, l, t_next, l_next, target), false));
        }
        t = t_next;
        l = l_next;
        if t >= horizon {
            return Ok((horizon, true));
        }
    }
}

/// Max over probes of the first time the `L2` norm halves, starting at `s = 0`.
pub fn dissipation_time(
    flow: &FlowSpec,
    probes: &[Probe],
    config: &SolverConfig,
    opts: &TdisOptions,
) -> Result<DissipationTimeEstimate> {
    if probes.is_empty() {
        return Err(MixError::InvalidParameter("empty probe set".into()));
    }
    let halvings: Vec<ProbeHalving> = probes
        .par_iter()
        .map(|p| {
            let f = adapt_probe(flow, &p.field);
            halving_time(flow, &f, config, opts).map(|(t_half, lower_bound)| ProbeHalving {
                id: p.id.clone(),
                t_half,
                lower_bound,
            })
        })
        .collect::<Result<_>>()?;
    let worst = halvings
        .iter()
        .max_by(|a, b| a.t_half.total_cmp(&b.t_half))
        .expect("non-empty");
    Ok(DissipationTimeEstimate {
        t_dis: worst.t_half,
        probe_count: halvings.len(),
        worst_probe: worst.id.clone(),
        lower_bound: halvings.iter().any(|h| h.lower_bound),
        probes: halvings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{advance_autonomous, advance_flow, advance_schedule};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn power_law_examples() {
        let s: Vec<(f64, f64)> = (1..=50).map(|i| (i as f64, (i as f64).powf(-0.5))).collect();
        let f = fit_power_law(&s, Window::all()).unwrap();
        assert!((f.exponent_or_rate + 0.5).abs() < 1e-10);
        assert_relative_eq!(f.r_squared.unwrap(), 1.0, epsilon = 1e-12);

        let s: Vec<(f64, f64)> = (1..=50).map(|i| (i as f64, 3.0 * (i as f64).powi(-2))).collect();
        let f = fit_power_law(&s, Window::all()).unwrap();
        assert_relative_eq!(f.exponent_or_rate, -2.0, epsilon = 1e-10);
        assert_relative_eq!(f.intercept, 3f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn exponential_examples() {
        let s: Vec<(f64, f64)> = (0..40).map(|i| (i as f64 * 0.1, (-3.0 * i as f64 * 0.1).exp())).collect();
        let f = fit_exponential(&s, Window::all()).unwrap();
        assert_relative_eq!(f.exponent_or_rate, 3.0, epsilon = 1e-10);
        assert_relative_eq!(f.r_squared.unwrap(), 1.0, epsilon = 1e-12);

        let g = grid(32);
        let kappa = 1e-2;
        let f0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let cfg = SolverConfig::new(g, kappa, 0.1).unwrap();
        let traj = advance_flow(&f0, &FlowSpec::Zero, 3.0, &cfg).unwrap();
        let fit = fit_exponential(&traj.l2_series(), Window::all()).unwrap();
        assert_relative_eq!(fit.exponent_or_rate, 4.0 * PI * PI * kappa, max_relative = 1e-10);
    }

    #[test]
    fn fit_rejects_bad_input() {
        let s = vec![(1.0, 1.0), (2.0, 0.0), (3.0, 0.5)];
        assert!(matches!(fit_power_law(&s, Window::all()), Err(MixError::Fit(_))));
        assert!(fit_power_law(&s[..1], Window::all()).is_err());
        let few = vec![(1.0, 1.0), (2.0, 0.5), (3.0, 0.3)];
        assert_eq!(fit_power_law(&few, Window::all()).unwrap().r_squared, None);
    }

    #[test]
    fn fit_window_and_confidence() {
        let s: Vec<(f64, f64)> = (1..=100)
            .map(|i| {
                let t = i as f64;
                (t, t.powf(-0.7) * (1.0 + 0.01 * (t * 1.7).sin()))
            })
            .collect();
        let f = fit_power_law(&s, Window::between(10.0, 60.0)).unwrap();
        assert_eq!(f.n_samples, 51);
        assert_eq!((f.t_min, f.t_max), (10.0, 60.0));
        assert!(f.ci_low < f.exponent_or_rate && f.exponent_or_rate < f.ci_high);
        assert!((f.exponent_or_rate + 0.7).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn fits_invariant_under_value_scaling(c in 1e-3f64..1e3, p in -3.0f64..-0.1, noise in 0.0f64..0.1) {
            let s: Vec<(f64, f64)> = (1..=30)
                .map(|i| {
                    let t = i as f64;
                    (t, t.powf(p) * (1.0 + noise * (t * 2.3).sin()))
                })
                .collect();
            let scaled: Vec<(f64, f64)> = s.iter().map(|&(t, v)| (t, c * v)).collect();
            for kind in [FitKind::Power, FitKind::Exponential] {
                let a = fit(&s, Window::all(), kind).unwrap();
                let b = fit(&scaled, Window::all(), kind).unwrap();
                prop_assert!((a.exponent_or_rate - b.exponent_or_rate).abs() < 1e-12 * a.exponent_or_rate.abs().max(1.0));
                prop_assert!((b.intercept - a.intercept - c.ln()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn heat_halving_time() {
        let g = grid(16);
        for kappa in [1e-2, 1e-3] {
            let dt = 0.05 / kappa / 1000.0;
            let cfg = SolverConfig::new(g, kappa, dt).unwrap();
            let est = dissipation_time(
                &FlowSpec::Zero,
                &default_probes(g, 1),
                &cfg,
                &TdisOptions::for_kappa(kappa, dt),
            )
            .unwrap();
            let exact = 2f64.ln() / (4.0 * PI * PI * kappa);
            assert!((est.t_dis - exact).abs() < 1e-6 * exact, "{} vs {exact}", est.t_dis);
            assert_eq!(est.worst_probe, "mode(1,0)");
            assert!(!est.lower_bound);
            assert_eq!(est.probe_count, 7);
        }
    }

    #[test]
    fn tdis_horizon_gives_lower_bound() {
        let g = grid(16);
        let cfg = SolverConfig::new(g, 1e-3, 1.0).unwrap();
        let opts = TdisOptions {
            horizon: 5.0,
            refine: 4,
        };
        let est = dissipation_time(&FlowSpec::Zero, &default_probes(g, 1), &cfg, &opts).unwrap();
        assert!(est.lower_bound);
        assert_eq!(est.t_dis, 5.0);
    }

    #[test]
    fn adding_probe_never_decreases_tdis() {
        let g = grid(32);
        let kappa = 1e-3;
        let flow = FlowSpec::kolmogorov(2, 1.0).unwrap();
        let cfg = SolverConfig::new(g, kappa, 0.5).unwrap();
        let opts = TdisOptions::for_kappa(kappa, 0.5);
        let probes = default_probes(g, 3);
        let a = dissipation_time(&flow, &probes[..3], &cfg, &opts).unwrap();
        let b = dissipation_time(&flow, &probes, &cfg, &opts).unwrap();
        assert!(b.t_dis >= a.t_dis);
        assert!(b.t_dis < 2f64.ln() / (4.0 * PI * PI * kappa));
    }

    #[test]
    fn energy_balance_and_fraction() {
        let g = grid(32);
        let f0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let kappa = 1e-3;
        let t_half = 2f64.ln() / (4.0 * PI * PI * kappa);
        let cfg = SolverConfig::new(g, kappa, t_half / 20.0).unwrap();
        let traj = advance_flow(&f0, &FlowSpec::Zero, t_half, &cfg).unwrap();
        assert!(energy_balance_residual(&traj, kappa) < 1e-10);
        assert_relative_eq!(dissipated_fraction(&traj), 0.75, epsilon = 1e-10);

        let sched = crate::flows::pierrehumbert_schedule(1.0, 2, 1.0, 4).unwrap();
        let cfg0 = SolverConfig::new(g, 0.0, 0.25).unwrap();
        let traj = advance_schedule(&f0, &sched, &cfg0).unwrap();
        assert!(energy_balance_residual(&traj, 0.0) < 1e-10);
        assert!(dissipated_fraction(&traj) < 1e-10);
    }

    #[test]
    fn pierrehumbert_balance_small_kappa() {
        let g = grid(128);
        let f0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let kappa = 1e-3;
        let sched = crate::flows::pierrehumbert_schedule(1.0, 7, 1.0, 6).unwrap();
        let cfg = SolverConfig::new(g, kappa, 0.1).unwrap();
        let traj = advance_schedule(&f0, &sched, &cfg).unwrap();
        assert!(energy_balance_residual(&traj, kappa) < 1e-4);
    }

    #[test]
    fn growth_ratio_examples() {
        let g = grid(64);
        let f0 = ScalarField::sin_mode(g, 1, 0, 1.0);
        let cfg = SolverConfig::new(g, 0.0, 0.5).unwrap();
        let traj = advance_flow(&f0, &FlowSpec::kolmogorov(2, 1.0).unwrap(), 6.0, &cfg).unwrap();
        let ratio = hminus1_growth_ratio(&traj).unwrap();
        assert_relative_eq!(ratio[0].1, 1.0, epsilon = 1e-12);
        assert!(ratio.iter().all(|&(_, r)| r >= 1.0 - 1e-9));

        let z = ScalarField::zeros(g);
        let traj = advance_autonomous(&z, &FlowSpec::Zero, 0.1, &SolverConfig::new(g, 0.0, 0.05).unwrap()).unwrap();
        assert!(hminus1_growth_ratio(&traj).is_err());
    }

    #[test]
    fn probe_adaptation_for_shears() {
        let g = grid(16);
        let flow = FlowSpec::kolmogorov(2, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x1, x2| 1.0 + (2.0 * PI * x2).cos() + (2.0 * PI * x1).sin());
        let a = adapt_probe(&flow, &f);
        assert!((crate::field::l2_norm(&a) - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
