//! Config-driven runs: a scenario, a flow, solver settings and an optional
//! one-parameter sweep. Each sweep point writes its CSVs and snapshots; the
//! run writes `report.json` with per-point observables, acceptance checks and
//! provenance.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{
    adapt_probe, default_probes, dissipated_fraction, dissipation_time, energy_balance_residual,
    fit_exponential, fit_power_law, hminus1_growth_ratio, probes_for_flow, FitResult, TdisOptions,
    Window,
};
use crate::error::{MixError, Result};
use crate::field::{project_mean_zero, Grid, ScalarField};
use crate::flows::{cascade_stages, kolmogorov_profile, FlowSpec, ShearProfile};
use crate::io::{write_csv, write_ks_csv, write_trajectory, OracleRow};
use crate::keller_segel::{gaussian_bump, ks_advance, KsConfig, KsState};
use crate::lagrangian::{feynman_kac_with, McConfig, SpectralInterpolant};
use crate::solver::{advance_flow, SolverConfig, Trajectory, CFL_LIMIT};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Overrides the worker count of sweeps.
pub const WORKERS_ENV: &str = "MIXLAB_WORKERS";

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    ShearMixingRate,
    HamiltonianLowerBound,
    PierrehumbertMixing,
    MixlowerCheck,
    ShearTdisScaling,
    CellularTdisScaling,
    PierrehumbertTdisScaling,
    AnomalousDissipation,
    OracleCheck,
    KellerSegelSuppression,
}

impl Scenario {
    pub const ALL: [Scenario; 10] = [
        Scenario::ShearMixingRate,
        Scenario::HamiltonianLowerBound,
        Scenario::PierrehumbertMixing,
        Scenario::MixlowerCheck,
        Scenario::ShearTdisScaling,
        Scenario::CellularTdisScaling,
        Scenario::PierrehumbertTdisScaling,
        Scenario::AnomalousDissipation,
        Scenario::OracleCheck,
        Scenario::KellerSegelSuppression,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Scenario::ShearMixingRate => "shear_mixing_rate",
            Scenario::HamiltonianLowerBound => "hamiltonian_lower_bound",
            Scenario::PierrehumbertMixing => "pierrehumbert_mixing",
            Scenario::MixlowerCheck => "mixlower_check",
            Scenario::ShearTdisScaling => "shear_tdis_scaling",
            Scenario::CellularTdisScaling => "cellular_tdis_scaling",
            Scenario::PierrehumbertTdisScaling => "pierrehumbert_tdis_scaling",
            Scenario::AnomalousDissipation => "anomalous_dissipation",
            Scenario::OracleCheck => "oracle_check",
            Scenario::KellerSegelSuppression => "keller_segel_suppression",
        }
    }

    fn is_tdis(self) -> bool {
        matches!(
            self,
            Scenario::ShearTdisScaling
                | Scenario::CellularTdisScaling
                | Scenario::PierrehumbertTdisScaling
        )
    }

    /// Transport-only scenarios.
    fn needs_zero_kappa(self) -> bool {
        matches!(
            self,
            Scenario::ShearMixingRate
                | Scenario::HamiltonianLowerBound
                | Scenario::PierrehumbertMixing
                | Scenario::MixlowerCheck
        )
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Initial scalar, written `mode(k1,k2)` (a unit sine mode) or
/// `random(seed,band)` in configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitialData {
    Mode { k1: i64, k2: i64 },
    Random { seed: u64, band: usize },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Mode { k1: 1, k2: 0 }
    }
}

impl InitialData {
    /// The field, projected to exact mean zero.
    pub fn build(&self, grid: Grid) -> Result<ScalarField> {
        self.check(grid)?;
        let f = match *self {
            InitialData::Mode { k1, k2 } => ScalarField::sin_mode(grid, k1, k2, 1.0),
            InitialData::Random { seed, band } => ScalarField::random_band_limited(grid, seed, band)?,
        };
        Ok(project_mean_zero(&f))
    }

    fn check(&self, grid: Grid) -> Result<()> {
        let half = (grid.n() / 2) as i64;
        match *self {
            InitialData::Mode { k1: 0, k2: 0 } => Err(MixError::Config(
                "initial_data mode(0,0) is the mean, which is excluded".into(),
            )),
            InitialData::Mode { k1, k2 } if k1.abs() >= half || k2.abs() >= half => {
                Err(MixError::Config(format!(
                    "initial_data mode({k1},{k2}) reaches the Nyquist frequency of n={}",
                    grid.n()
                )))
            }
            InitialData::Random { band, .. } if band == 0 || band as i64 > grid.max_frequency() => {
                Err(MixError::Config(format!(
                    "initial_data band {band} must lie in [1, {}] for n={}",
                    grid.max_frequency(),
                    grid.n()
                )))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialData::Mode { k1, k2 } => write!(f, "mode({k1},{k2})"),
            InitialData::Random { seed, band } => write!(f, "random({seed},{band})"),
        }
    }
}

impl FromStr for InitialData {
    type Err = MixError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || MixError::Config(format!("initial_data '{s}': expected mode(k1,k2) or random(seed,band)"));
        let s_trim = s.trim();
        let (name, rest) = s_trim.split_once('(').ok_or_else(bad)?;
        let args: Vec<&str> = rest.strip_suffix(')').ok_or_else(bad)?.split(',').map(str::trim).collect();
        if args.len() != 2 {
            return Err(bad());
        }
        match name.trim() {
            "mode" => Ok(InitialData::Mode {
                k1: args[0].parse().map_err(|_| bad())?,
                k2: args[1].parse().map_err(|_| bad())?,
            }),
            "random" => Ok(InitialData::Random {
                seed: args[0].parse().map_err(|_| bad())?,
                band: args[1].parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for InitialData {
    type Error = MixError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InitialData> for String {
    fn from(d: InitialData) -> String {
        d.to_string()
    }
}

/// Quantity varied across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SweepParam {
    Kappa,
    Dt,
    N,
    Amplitude,
    A,
    Eps,
    M,
    Tau,
    Seed,
    AmplitudeScale,
    NBar,
    Chi,
}

impl SweepParam {
    const NAMES: [(&'static str, SweepParam); 12] = [
        ("kappa", SweepParam::Kappa),
        ("dt", SweepParam::Dt),
        ("n", SweepParam::N),
        ("amplitude", SweepParam::Amplitude),
        ("A", SweepParam::A),
        ("eps", SweepParam::Eps),
        ("m", SweepParam::M),
        ("tau", SweepParam::Tau),
        ("seed", SweepParam::Seed),
        ("amplitude_scale", SweepParam::AmplitudeScale),
        ("n_bar", SweepParam::NBar),
        ("chi", SweepParam::Chi),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, p)| *p == self).expect("listed").0
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepParam::N | SweepParam::M | SweepParam::Seed)
    }
}

impl FromStr for SweepParam {
    type Err = MixError;
    fn from_str(s: &str) -> Result<Self> {
        Self::NAMES
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, p)| *p)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::NAMES.iter().map(|(n, _)| *n).collect();
                MixError::Config(format!("unknown sweep parameter '{s}' (known: {})", known.join(", ")))
            })
    }
}

/// `[sweep]` table with a single `name = [values]` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<f64>>", into = "BTreeMap<String, Vec<f64>>")]
pub struct Sweep {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

impl TryFrom<BTreeMap<String, Vec<f64>>> for Sweep {
    type Error = MixError;
    fn try_from(m: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if m.len() != 1 {
            return Err(MixError::Config(format!(
                "sweep must name exactly one parameter, found {}",
                m.len()
            )));
        }
        let (name, values) = m.into_iter().next().expect("one entry");
        Ok(Sweep {
            parameter: name.parse()?,
            values,
        })
    }
}

impl From<Sweep> for BTreeMap<String, Vec<f64>> {
    fn from(s: Sweep) -> Self {
        BTreeMap::from([(s.parameter.name().to_string(), s.values)])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdisSection {
    pub probe_seed: u64,
    /// Add probes concentrated at the critical points of a shear.
    pub layer_probes: bool,
    pub refine: usize,
    /// Defaults to the Poincare bound for each kappa.
    pub horizon: Option<f64>,
}

impl Default for TdisSection {
    fn default() -> Self {
        TdisSection {
            probe_seed: 1,
            layer_probes: true,
            refine: 16,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub n_paths: usize,
    pub seed: u64,
    /// Defaults to a 32nd of the shortest schedule step.
    pub sde_dt: Option<f64>,
    /// Probe points `((i + 0.3)/p, (j + 0.6)/p)` for `i, j < p`.
    pub points_per_side: usize,
    pub n_sigma: f64,
    pub abs_tol: f64,
    /// Defaults to 13/16 of the points, rounded up.
    pub min_agree: Option<usize>,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            n_paths: 10_000,
            seed: 1,
            sde_dt: None,
            points_per_side: 4,
            n_sigma: 3.0,
            abs_tol: 1e-3,
            min_agree: None,
        }
    }
}

impl OracleSection {
    fn required(&self) -> usize {
        let total = self.points_per_side * self.points_per_side;
        self.min_agree.unwrap_or((13 * total).div_ceil(16))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KsSection {
    pub n_bar: f64,
    pub chi: f64,
    /// Width of the Gaussian bump holding the mass.
    pub width: f64,
    pub dt: f64,
    pub t_final: f64,
    /// The unstirred baseline must blow up before this time.
    pub blowup_by: f64,
    pub density_factor: f64,
    pub tail_threshold: f64,
}

impl Default for KsSection {
    fn default() -> Self {
        let k = KsConfig::new(1e-3);
        KsSection {
            n_bar: 78.0,
            chi: 1.0,
            width: 0.05,
            dt: k.dt,
            t_final: 10.0,
            blowup_by: 1.0,
            density_factor: k.density_factor,
            tail_threshold: k.tail_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub flow: FlowSpec,
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub initial_data: InitialData,
    pub output_dir: PathBuf,
    /// End time of trajectories; scenario default when absent.
    #[serde(default)]
    pub t_final: Option<f64>,
    #[serde(default)]
    pub fit: Window,
    #[serde(default)]
    pub tdis: TdisSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub keller_segel: KsSection,
    /// Flow run through the same sweep for comparison (anomalous dissipation).
    #[serde(default)]
    pub contrast_flow: Option<FlowSpec>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| MixError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| MixError::Config(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical JSON form, excluding `output_dir` and `workers`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("output_dir");
            m.remove("workers");
        }
        hex::encode(Sha256::digest(serde_json::to_vec(&v).expect("value serializes")))
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        let mut s = BTreeMap::new();
        match self.flow {
            FlowSpec::PierrehumbertRandom { seed, .. } | FlowSpec::SelfSimilarCascade { seed, .. } => {
                s.insert("flow".into(), seed);
            }
            _ => {}
        }
        if let InitialData::Random { seed, .. } = self.initial_data {
            s.insert("initial_data".into(), seed);
        }
        if self.scenario.is_tdis() {
            s.insert("probes".into(), self.tdis.probe_seed);
        }
        if self.scenario == Scenario::OracleCheck {
            s.insert("oracle".into(), self.oracle.seed);
        }
        s
    }

    fn default_t_final(&self, flow: &FlowSpec) -> Option<f64> {
        if let Some(t) = self.t_final {
            return Some(t);
        }
        match self.scenario {
            Scenario::ShearMixingRate | Scenario::HamiltonianLowerBound => Some(64.0),
            Scenario::PierrehumbertMixing | Scenario::MixlowerCheck => match flow {
                FlowSpec::PierrehumbertRandom { tau, .. } | FlowSpec::AlternatingTent { tau, .. } => {
                    Some(40.0 * tau)
                }
                _ => None,
            },
            Scenario::AnomalousDissipation => match flow {
                FlowSpec::SelfSimilarCascade { t_singular, .. } => Some(*t_singular),
                _ => None,
            },
            Scenario::OracleCheck => Some(2.0),
            Scenario::KellerSegelSuppression => Some(self.keller_segel.t_final),
            _ => None,
        }
    }
}

/// A reason a config cannot run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// One sweep point, fully resolved.
#[derive(Debug, Clone)]
struct Point {
    index: usize,
    value: Option<f64>,
    flow: FlowSpec,
    solver: SolverConfig,
    ks: KsSection,
    amplitude_scale: f64,
}

fn set_amplitude(flow: &mut FlowSpec, v: f64) -> Result<()> {
    match flow {
        FlowSpec::Shear { profile, .. } => match profile {
            ShearProfile::Kolmogorov { amplitude, .. }
            | ShearProfile::Tent { amplitude }
            | ShearProfile::Constant { amplitude } => *amplitude = v,
            ShearProfile::Samples(_) => {
                return Err(MixError::Config("sampled profiles have no amplitude".into()))
            }
        },
        FlowSpec::PierrehumbertRandom { amplitude, .. } | FlowSpec::AlternatingTent { amplitude, .. } => {
            *amplitude = v
        }
        other => {
            return Err(MixError::Config(format!(
                "sweep parameter 'amplitude' does not apply to flow '{}'",
                other.variant_name()
            )))
        }
    }
    Ok(())
}

fn apply(point: &mut Point, param: SweepParam, v: f64) -> Result<()> {
    let mismatch = |flow: &FlowSpec| {
        MixError::Config(format!(
            "sweep parameter '{}' does not apply to flow '{}'",
            param.name(),
            flow.variant_name()
        ))
    };
    match param {
        SweepParam::Kappa => point.solver.kappa = v,
        SweepParam::Dt => point.solver.dt = v,
        SweepParam::N => point.solver.grid = Grid::new(v as usize)?,
        SweepParam::Amplitude => set_amplitude(&mut point.flow, v)?,
        SweepParam::A => match &mut point.flow {
            FlowSpec::Cellular { a, .. } => *a = v,
            f => return Err(mismatch(f)),
        },
        SweepParam::Eps => match &mut point.flow {
            FlowSpec::Cellular { eps, .. } => *eps = v,
            f => return Err(mismatch(f)),
        },
        SweepParam::M => match &mut point.flow {
            FlowSpec::Shear {
                profile: ShearProfile::Kolmogorov { m, amplitude, .. },
                ..
            } => {
                kolmogorov_profile(v as u32, *amplitude)?;
                *m = v as u32;
            }
            f => return Err(mismatch(f)),
        },
        SweepParam::Tau => match &mut point.flow {
            FlowSpec::PierrehumbertRandom { tau, .. } | FlowSpec::AlternatingTent { tau, .. } => *tau = v,
            f => return Err(mismatch(f)),
        },
        SweepParam::Seed => match &mut point.flow {
            FlowSpec::PierrehumbertRandom { seed, .. } | FlowSpec::SelfSimilarCascade { seed, .. } => {
                *seed = v as u64
            }
            f => return Err(mismatch(f)),
        },
        SweepParam::AmplitudeScale => point.amplitude_scale = v,
        SweepParam::NBar => point.ks.n_bar = v,
        SweepParam::Chi => point.ks.chi = v,
    }
    Ok(())
}

/// Sweep points in config order. The Keller–Segel scenario always starts with
/// the unstirred baseline (`amplitude_scale = 0`).
fn points(cfg: &ExperimentConfig) -> Vec<Result<Point>> {
    let base = Point {
        index: 0,
        value: None,
        flow: cfg.flow.clone(),
        solver: cfg.solver,
        ks: cfg.keller_segel,
        amplitude_scale: 1.0,
    };
    let mut values: Vec<Option<f64>> = match &cfg.sweep {
        None => vec![None],
        Some(s) => s.values.iter().map(|&v| Some(v)).collect(),
    };
    let ks_amp = cfg.scenario == Scenario::KellerSegelSuppression
        && cfg.sweep.as_ref().is_some_and(|s| s.parameter == SweepParam::AmplitudeScale);
    if ks_amp {
        values.insert(0, Some(0.0));
    }
    values
        .into_iter()
        .enumerate()
        .map(|(index, value)| {
            let mut p = Point {
                index,
                value,
                ..base.clone()
            };
            if let (Some(v), Some(s)) = (value, &cfg.sweep) {
                apply(&mut p, s.parameter, v)?;
            }
            Ok(p)
        })
        .collect()
}

fn kolmogorov_order(flow: &FlowSpec) -> Option<u32> {
    match flow {
        FlowSpec::Shear {
            profile: ShearProfile::Kolmogorov { m, .. },
            ..
        } => Some(*m),
        _ => None,
    }
}

/// Every reason `cfg` cannot run; empty iff it is runnable.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let sc = cfg.scenario;
    if let Err(e) = cfg.solver.validate() {
        out.push(Violation::new("solver", e.to_string()));
    }
    if cfg.output_dir.as_os_str().is_empty() {
        out.push(Violation::new("output_dir", "must not be empty"));
    }
    if cfg.workers == Some(0) {
        out.push(Violation::new("workers", "must be >= 1"));
    }
    if let (Some(a), Some(b)) = (cfg.fit.t_min, cfg.fit.t_max) {
        if !(a < b) {
            out.push(Violation::new("fit", format!("t_min {a} must be below t_max {b}")));
        }
    }

    if let Some(s) = &cfg.sweep {
        let name = format!("sweep.{}", s.parameter.name());
        if s.values.is_empty() {
            out.push(Violation::new(&name, "sweep is empty"));
        }
        for (i, &v) in s.values.iter().enumerate() {
            if !(v > 0.0 && v.is_finite()) {
                out.push(Violation::new(&name, format!("value {v} must be positive and finite")));
            } else if s.parameter.is_integer() && v.fract() != 0.0 {
                out.push(Violation::new(&name, format!("value {v} must be an integer")));
            }
            if s.values[..i].contains(&v) {
                out.push(Violation::new(&name, format!("value {v} repeated")));
            }
        }
    }

    let needed_sweep = match sc {
        Scenario::ShearTdisScaling | Scenario::PierrehumbertTdisScaling | Scenario::AnomalousDissipation => {
            Some(SweepParam::Kappa)
        }
        Scenario::CellularTdisScaling => Some(SweepParam::A),
        Scenario::KellerSegelSuppression => Some(SweepParam::AmplitudeScale),
        _ => None,
    };
    if let Some(p) = needed_sweep {
        match &cfg.sweep {
            Some(s) if s.parameter == p && s.values.len() >= 2 => {}
            _ => out.push(Violation::new(
                "sweep",
                format!("scenario {sc} needs a sweep over '{}' with at least two values", p.name()),
            )),
        }
    }

    let flow_ok = match sc {
        Scenario::ShearMixingRate | Scenario::ShearTdisScaling => kolmogorov_order(&cfg.flow).is_some(),
        Scenario::HamiltonianLowerBound => matches!(cfg.flow, FlowSpec::Shear { .. }),
        Scenario::PierrehumbertMixing | Scenario::PierrehumbertTdisScaling => {
            matches!(cfg.flow, FlowSpec::PierrehumbertRandom { .. })
        }
        Scenario::CellularTdisScaling => matches!(cfg.flow, FlowSpec::Cellular { .. }),
        Scenario::AnomalousDissipation | Scenario::MixlowerCheck | Scenario::OracleCheck => {
            cfg.flow.is_schedule_based()
        }
        Scenario::KellerSegelSuppression => cfg.flow.is_schedule_based(),
    };
    // the unstirred flow is the heat baseline of every dissipation-time sweep
    let flow_ok = flow_ok || (sc.is_tdis() && cfg.flow == FlowSpec::Zero);
    if !flow_ok {
        out.push(Violation::new(
            "flow",
            format!("flow '{}' does not fit scenario {sc}", cfg.flow.variant_name()),
        ));
    }
    if let Some(c) = &cfg.contrast_flow {
        if !c.is_schedule_based() {
            out.push(Violation::new("contrast_flow", "must be a shear-type flow"));
        }
    }

    if sc == Scenario::OracleCheck {
        let o = &cfg.oracle;
        if o.n_paths < crate::lagrangian::MIN_PATHS {
            out.push(Violation::new(
                "oracle.n_paths",
                format!("{} below the minimum {}", o.n_paths, crate::lagrangian::MIN_PATHS),
            ));
        }
        if o.points_per_side == 0 || !(o.n_sigma > 0.0) || !(o.abs_tol >= 0.0) {
            out.push(Violation::new("oracle", "need points_per_side >= 1, n_sigma > 0, abs_tol >= 0"));
        }
        if o.sde_dt.is_some_and(|d| !(d > 0.0)) {
            out.push(Violation::new("oracle.sde_dt", "must be positive"));
        }
    }
    if sc == Scenario::KellerSegelSuppression {
        let k = &cfg.keller_segel;
        let positive = [k.n_bar, k.chi, k.width, k.dt, k.t_final, k.blowup_by, k.tail_threshold];
        if positive.iter().any(|x| !(*x > 0.0)) || !(k.density_factor > 1.0) {
            out.push(Violation::new("keller_segel", format!("parameters out of range: {k:?}")));
        }
    }
    if sc.is_tdis() && cfg.tdis.horizon.is_some_and(|h| !(h > 0.0)) {
        out.push(Violation::new("tdis.horizon", "must be positive"));
    }

    for p in points(cfg) {
        let p = match p {
            Ok(p) => p,
            Err(e) => {
                out.push(Violation::new("sweep", e.to_string()));
                break;
            }
        };
        let at = match p.value {
            Some(v) => format!(" at sweep point {v}"),
            None => String::new(),
        };
        let grid = p.solver.grid;
        if let Err(e) = cfg.initial_data.check(grid) {
            out.push(Violation::new("initial_data", format!("{e}{at}")));
        }
        let kappa = p.solver.kappa;
        if sc.needs_zero_kappa() && kappa != 0.0 {
            out.push(Violation::new("solver.kappa", format!("scenario {sc} runs at kappa = 0{at}")));
        }
        if (sc.is_tdis() || sc == Scenario::AnomalousDissipation) && !(kappa > 0.0) {
            out.push(Violation::new("solver.kappa", format!("scenario {sc} needs kappa > 0{at}")));
        }
        if sc != Scenario::KellerSegelSuppression && !sc.is_tdis() {
            match cfg.default_t_final(&p.flow) {
                Some(t) if t > 0.0 && t.is_finite() => {}
                Some(t) => out.push(Violation::new("t_final", format!("{t} must be positive"))),
                None => out.push(Violation::new("t_final", format!("required for scenario {sc}"))),
            }
        }
        for (field, flow) in std::iter::once(("flow", &p.flow)).chain(cfg.contrast_flow.iter().map(|c| ("contrast_flow", c))) {
            check_flow(field, flow, &p.solver, &at, &mut out);
        }
    }
    out
}

fn check_flow(field: &str, flow: &FlowSpec, solver: &SolverConfig, at: &str, out: &mut Vec<Violation>) {
    let grid = solver.grid;
    match flow {
        FlowSpec::Cellular { a, eps } => {
            if let Err(e) = crate::flows::cellular_velocity(*a, *eps, 0.0, 0.0) {
                out.push(Violation::new(field, format!("{e}{at}")));
                return;
            }
            let cells = (1.0 / eps).round();
            if 2.0 * cells >= grid.n() as f64 / 2.0 {
                out.push(Violation::new(
                    field,
                    format!("cellular velocity frequency {cells} not resolved by n={}{at}", grid.n()),
                ));
            }
            let cfl = solver.cfl(2.0 * PI * a.abs());
            if cfl > CFL_LIMIT {
                out.push(Violation::new(
                    "solver.dt",
                    format!("stability: dt*max_speed*n = {cfl:.3} exceeds {CFL_LIMIT} for A = {a}{at}"),
                ));
            }
        }
        FlowSpec::SelfSimilarCascade {
            alpha,
            t_singular,
            lambda_ratio,
            n_stages,
            ..
        } => match cascade_stages(*alpha, *t_singular, *lambda_ratio, *n_stages) {
            Ok(stages) => {
                for (j, s) in stages.iter().enumerate() {
                    if 2 * s.frequency as usize >= grid.n() {
                        out.push(Violation::new(
                            field,
                            format!(
                                "stage frequency exceeds Nyquist: stage {j} has frequency {} but n={} resolves below {}{at}",
                                s.frequency,
                                grid.n(),
                                grid.n() / 2
                            ),
                        ));
                    }
                }
            }
            Err(e) => out.push(Violation::new(field, format!("{e}{at}"))),
        },
        FlowSpec::Shear {
            profile: ShearProfile::Kolmogorov { m, frequency, .. },
            ..
        } => {
            if m.saturating_mul(*frequency) as usize >= grid.n() / 2 {
                out.push(Violation::new(
                    field,
                    format!("profile bandwidth {} exceeds Nyquist of n={}{at}", m * frequency, grid.n()),
                ));
            }
        }
        FlowSpec::Shear {
            profile: ShearProfile::Samples(v),
            ..
        } if v.is_empty() => out.push(Violation::new(field, "empty sample profile")),
        _ => {}
    }
}

/// Named pass/fail predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub criterion: String,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, value: f64, criterion: impl Into<String>, pass: bool) -> Self {
        Check {
            name: name.into(),
            value,
            criterion: criterion.into(),
            pass,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    pub index: usize,
    pub value: Option<f64>,
    pub observables: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fits: BTreeMap<String, FitResult>,
    pub checks: Vec<Check>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Scenario,
    Simulate,
    DissipationTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: Scenario,
    pub mode: RunMode,
    pub sweep_parameter: Option<String>,
    pub points: Vec<PointReport>,
    /// Checks across the sweep.
    pub checks: Vec<Check>,
    pub pass: bool,
    pub provenance: Provenance,
}

impl Report {
    pub fn failed_checks(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .points
            .iter()
            .flat_map(|p| {
                let err = p.error.as_ref().map(|e| format!("point {}: error: {e}", p.index));
                p.checks
                    .iter()
                    .filter(|c| !c.pass)
                    .map(move |c| format!("point {}: {} = {} ({})", p.index, c.name, c.value, c.criterion))
                    .chain(err)
            })
            .collect();
        v.extend(
            self.checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{} = {} ({})", c.name, c.value, c.criterion)),
        );
        v
    }
}

/// Worker count: `MIXLAB_WORKERS`, then the config, then all cores.
pub fn worker_count(cfg: &ExperimentConfig) -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run the scenario's acceptance measurement over the sweep.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<Report> {
    run(cfg, RunMode::Scenario)
}

/// Plain trajectories (or Keller–Segel runs) for every sweep point.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<Report> {
    run(cfg, RunMode::Simulate)
}

/// Dissipation time of the flow at every sweep point.
pub fn run_dissipation_time(cfg: &ExperimentConfig) -> Result<Report> {
    run(cfg, RunMode::DissipationTime)
}

fn run(cfg: &ExperimentConfig, mode: RunMode) -> Result<Report> {
    let mut violations = validate_config(cfg);
    if mode == RunMode::DissipationTime {
        if let Some(p) = points(cfg).into_iter().flatten().find(|p| !(p.solver.kappa > 0.0)) {
            violations.push(Violation::new(
                "solver.kappa",
                format!("dissipation time needs kappa > 0 (point {})", p.index),
            ));
        }
    }
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(MixError::Config(list.join("; ")));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    let pts: Vec<Point> = points(cfg).into_iter().collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(cfg))
        .build()
        .map_err(|e| MixError::Config(format!("worker pool: {e}")))?;
    let mut reports: Vec<PointReport> = pool.install(|| {
        pts.par_iter()
            .map(|p| {
                let mut r = PointReport {
                    index: p.index,
                    value: p.value,
                    ..Default::default()
                };
                if let Err(e) = run_point(cfg, mode, p, &mut r) {
                    r.error = Some(e.to_string());
                }
                r.pass = r.error.is_none() && r.checks.iter().all(|c| c.pass);
                r
            })
            .collect()
    });
    let checks = match mode {
        RunMode::Simulate => Vec::new(),
        _ => aggregate_checks(cfg, mode, &pts, &mut reports),
    };
    let pass = reports.iter().all(|p| p.pass) && checks.iter().all(|c| c.pass);
    let report = Report {
        scenario: cfg.scenario,
        mode,
        sweep_parameter: cfg.sweep.as_ref().map(|s| s.parameter.name().to_string()),
        points: reports,
        checks,
        pass,
        provenance: Provenance {
            config_hash: cfg.hash(),
            seeds: cfg.seeds(),
            version: VERSION.to_string(),
        },
    };
    write_report(cfg.output_dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

pub fn write_report(path: impl AsRef<Path>, report: &Report) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| MixError::Format(e.to_string()))?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn stem(cfg: &ExperimentConfig, p: &Point) -> String {
    match (&cfg.sweep, p.value) {
        (Some(s), Some(v)) => format!("p{}_{}{}", p.index, s.parameter.name(), v),
        _ => format!("p{}", p.index),
    }
}

fn rel(cfg: &ExperimentConfig, path: &Path) -> String {
    path.strip_prefix(&cfg.output_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

fn run_point(cfg: &ExperimentConfig, mode: RunMode, p: &Point, r: &mut PointReport) -> Result<()> {
    match (mode, cfg.scenario) {
        (_, Scenario::KellerSegelSuppression) if mode != RunMode::DissipationTime => ks_point(cfg, p, r),
        (RunMode::DissipationTime, _) => tdis_point(cfg, p, r),
        (RunMode::Scenario, sc) if sc.is_tdis() => tdis_point(cfg, p, r),
        (RunMode::Scenario, Scenario::OracleCheck) => oracle_point(cfg, p, r),
        (RunMode::Scenario, Scenario::AnomalousDissipation) => anomalous_point(cfg, p, r),
        (RunMode::Scenario, _) => mixing_point(cfg, p, r),
        (RunMode::Simulate, _) => {
            trajectory(cfg, p, &p.flow, "", r)?;
            Ok(())
        }
    }
}

/// Run `flow` from the initial data, persist it, and record the observables
/// and conservation checks shared by every trajectory.
fn trajectory(cfg: &ExperimentConfig, p: &Point, flow: &FlowSpec, tag: &str, r: &mut PointReport) -> Result<Trajectory> {
    let t_final = cfg
        .default_t_final(flow)
        .ok_or_else(|| MixError::Config("t_final required".into()))?;
    let mut f0 = cfg.initial_data.build(p.solver.grid)?;
    if cfg.scenario == Scenario::HamiltonianLowerBound {
        f0 = adapt_probe(flow, &f0);
    }
    let traj = advance_flow(&f0, flow, t_final, &p.solver)?;
    for path in write_trajectory(&cfg.output_dir, &format!("{}{tag}", stem(cfg, p)), &traj)? {
        r.files.push(rel(cfg, &path));
    }
    let key = |s: &str| format!("{s}{tag}");
    let first = *traj.first();
    let last = *traj.last();
    r.observables.insert(key("t_final"), last.t);
    r.observables.insert(key("l2_initial"), first.l2);
    r.observables.insert(key("l2_final"), last.l2);
    let mean = traj.final_field.spectrum()[0].norm();
    r.observables.insert(key("mean_final"), mean);
    r.checks.push(Check::new(&key("mean_zero"), mean, "|mean| <= 1e-14", mean <= 1e-14));
    let kappa = p.solver.kappa;
    if kappa == 0.0 {
        let drift = traj
            .series
            .iter()
            .map(|s| (s.l2 - first.l2).abs() / first.l2)
            .fold(0.0, f64::max);
        r.observables.insert(key("l2_relative_drift"), drift);
        if flow.is_schedule_based() {
            r.checks.push(Check::new(&key("l2_conservation"), drift, "<= 1e-10", drift <= 1e-10));
        }
    } else {
        let res = energy_balance_residual(&traj, kappa);
        r.observables.insert(key("energy_balance_residual"), res);
        r.checks.push(Check::new(&key("energy_balance"), res, "<= 1e-4", res <= 1e-4));
        r.observables.insert(key("dissipated_fraction"), dissipated_fraction(&traj));
    }
    let ratio = hminus1_growth_ratio(&traj)?
        .into_iter()
        .map(|(_, x)| x)
        .fold(f64::INFINITY, f64::min);
    r.observables.insert(key("min_interpolation_ratio"), ratio);
    r.checks.push(Check::new(&key("interpolation"), ratio, ">= 1 - 1e-9", ratio >= 1.0 - 1e-9));
    Ok(traj)
}

fn power_window(cfg: &ExperimentConfig, t_final: f64) -> Window {
    Window {
        t_min: cfg.fit.t_min.or(Some(1.0)),
        t_max: cfg.fit.t_max.or(Some(t_final)),
    }
}

fn mixing_point(cfg: &ExperimentConfig, p: &Point, r: &mut PointReport) -> Result<()> {
    let traj = trajectory(cfg, p, &p.flow, "", r)?;
    let t_final = traj.last().t;
    match cfg.scenario {
        Scenario::ShearMixingRate => {
            let m = kolmogorov_order(&p.flow).expect("validated");
            let fit = fit_power_law(&traj.h_minus_1_series(false), power_window(cfg, t_final))?;
            let target = -1.0 / m as f64;
            let e = fit.exponent_or_rate;
            r.observables.insert("expected_exponent".into(), target);
            r.checks.push(Check::new(
                "hminus1_exponent",
                e,
                format!("within 0.1 of {target}"),
                (e - target).abs() <= 0.1,
            ));
            r.fits.insert("hminus1".into(), fit);
        }
        Scenario::HamiltonianLowerBound => {
            let w = power_window(cfg, t_final);
            let h1 = fit_power_law(&traj.h1_series(false), w)?;
            let hm1 = fit_power_law(&traj.h_minus_1_series(false), w)?;
            r.checks.push(Check::new(
                "h1_growth_exponent",
                h1.exponent_or_rate,
                "<= 1.1",
                h1.exponent_or_rate <= 1.1,
            ));
            r.checks.push(Check::new(
                "hminus1_exponent",
                hm1.exponent_or_rate,
                ">= -1.1",
                hm1.exponent_or_rate >= -1.1,
            ));
            r.fits.insert("h1".into(), h1);
            r.fits.insert("hminus1".into(), hm1);
        }
        Scenario::PierrehumbertMixing | Scenario::MixlowerCheck => {
            let fit = fit_exponential(&traj.h_minus_1_series(true), cfg.fit)?;
            let lip = p.flow.lipschitz_sup(p.solver.grid, t_final)?;
            let gamma = fit.exponent_or_rate;
            r.observables.insert("lipschitz_sup".into(), lip);
            if cfg.scenario == Scenario::PierrehumbertMixing {
                r.checks.push(Check::new("exponential_rate", gamma, "> 0.05", gamma > 0.05));
                let r2 = fit.r_squared.unwrap_or(f64::NAN);
                r.checks.push(Check::new("exponential_r_squared", r2, ">= 0.98", r2 >= 0.98));
            }
            r.checks.push(Check::new(
                "lipschitz_bound",
                gamma,
                format!("<= 1.1 * {lip}"),
                gamma <= 1.1 * lip,
            ));
            r.fits.insert("hminus1".into(), fit);
        }
        _ => unreachable!("dispatched elsewhere"),
    }
    Ok(())
}

fn anomalous_point(cfg: &ExperimentConfig, p: &Point, r: &mut PointReport) -> Result<()> {
    trajectory(cfg, p, &p.flow, "", r)?;
    if let Some(c) = &cfg.contrast_flow {
        // same end time as the main flow
        let mut q = p.clone();
        q.flow = c.clone();
        let t = cfg.default_t_final(&p.flow).expect("validated");
        let cfg_c = ExperimentConfig {
            t_final: Some(t),
            ..cfg.clone()
        };
        trajectory(&cfg_c, &q, c, "_contrast", r)?;
    }
    Ok(())
}

fn tdis_point(cfg: &ExperimentConfig, p: &Point, r: &mut PointReport) -> Result<()> {
    let kappa = p.solver.kappa;
    let grid = p.solver.grid;
    let probes = if cfg.tdis.layer_probes {
        probes_for_flow(&p.flow, grid, cfg.tdis.probe_seed, kappa)
    } else {
        default_probes(grid, cfg.tdis.probe_seed)
    };
    let mut opts = TdisOptions::for_kappa(kappa, p.solver.dt);
    opts.refine = cfg.tdis.refine.max(1);
    if let Some(h) = cfg.tdis.horizon {
        opts.horizon = h;
    }
    let est = dissipation_time(&p.flow, &probes, &p.solver, &opts)?;
    r.observables.insert("t_dis".into(), est.t_dis);
    r.observables.insert("lower_bound".into(), est.lower_bound as u8 as f64);
    r.observables.insert("probe_count".into(), est.probe_count as f64);
    r.labels.insert("worst_probe".into(), est.worst_probe.clone());
    for h in &est.probes {
        r.observables.insert(format!("t_half[{}]", h.id), h.t_half);
    }
    if matches!(p.flow, FlowSpec::Zero) {
        let exact = 2f64.ln() / (4.0 * PI * PI * kappa);
        let rel_err = (est.t_dis / exact - 1.0).abs();
        r.observables.insert("poincare_time".into(), exact);
        r.checks.push(Check::new("heat_baseline", rel_err, "relative error <= 0.01", rel_err <= 0.01));
    }
    r.checks.push(Check::new(
        "within_horizon",
        est.lower_bound as u8 as f64,
        "every probe halves before the horizon",
        !est.lower_bound,
    ));
    Ok(())
}

fn oracle_point(cfg: &ExperimentConfig, p: &Point, r: &mut PointReport) -> Result<()> {
    let o = &cfg.oracle;
    let t = cfg.default_t_final(&p.flow).expect("validated");
    let grid = p.solver.grid;
    let kappa = p.solver.kappa;
    let schedule = p
        .flow
        .schedule(t, grid)?
        .ok_or_else(|| MixError::Config("oracle needs a shear-type flow".into()))?;
    let rho0 = cfg.initial_data.build(grid)?;
    let reference = trajectory(cfg, p, &p.flow, "", r)?;
    let fin = SpectralInterpolant::new(&reference.final_field);
    let interp = SpectralInterpolant::new(&rho0);
    let mut mc = McConfig::for_schedule(&schedule, o.n_paths, o.seed);
    if let Some(d) = o.sde_dt {
        mc.sde_dt = d;
    }
    let side = o.points_per_side;
    let mut rows = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let x = [(i as f64 + 0.3) / side as f64, (j as f64 + 0.6) / side as f64];
            let (est, se) = feynman_kac_with(&interp, &schedule, kappa, t, x, &mc)?;
            let v = fin.eval(x[0], x[1]);
            rows.push(OracleRow {
                x1: x[0],
                x2: x[1],
                mc_estimate: est,
                mc_stderr: se,
                spectral_value: v,
                abs_diff: (est - v).abs(),
            });
        }
    }
    let path = cfg.output_dir.join(format!("{}_oracle.csv", stem(cfg, p)));
    write_csv(BufWriter::new(File::create(&path)?), &rows)?;
    r.files.push(rel(cfg, &path));
    let agree = rows
        .iter()
        .filter(|row| row.abs_diff <= o.n_sigma * row.mc_stderr + o.abs_tol)
        .count();
    let need = o.required();
    r.observables.insert("agreeing_points".into(), agree as f64);
    r.observables.insert("total_points".into(), rows.len() as f64);
    r.observables.insert(
        "max_abs_diff".into(),
        rows.iter().map(|x| x.abs_diff).fold(0.0, f64::max),
    );
    r.checks.push(Check::new(
        "oracle_agreement",
        agree as f64,
        format!(">= {need} of {} within {}*stderr + {}", rows.len(), o.n_sigma, o.abs_tol),
        agree >= need,
    ));
    Ok(())
}

fn ks_point(cfg: &ExperimentConfig, p: &Point, r: &mut PointReport) -> Result<()> {
    let k = &p.ks;
    let grid = p.solver.grid;
    let state = KsState::from_density(&gaussian_bump(grid, k.n_bar, k.width)?, k.chi)?;
    let kcfg = KsConfig {
        dt: k.dt,
        density_factor: k.density_factor,
        tail_threshold: k.tail_threshold,
        snapshot_stride: p.solver.snapshot_stride,
    };
    let t_final = cfg.default_t_final(&p.flow).unwrap_or(k.t_final);
    let run = ks_advance(&state, &p.flow, p.amplitude_scale, t_final, &kcfg)?;
    let base = stem(cfg, p);
    let path = cfg.output_dir.join(format!("{base}_ks.csv"));
    write_ks_csv(BufWriter::new(File::create(&path)?), &run.series)?;
    r.files.push(rel(cfg, &path));
    if !run.trajectory.snapshots.is_empty() {
        let dir = cfg.output_dir.join(format!("{base}_ks_snapshots"));
        std::fs::create_dir_all(&dir)?;
        for s in &run.trajectory.snapshots {
            let path = dir.join(crate::io::snapshot_file_name(s.index, s.t));
            crate::io::save_field(&path, &s.field)?;
            r.files.push(rel(cfg, &path));
        }
    }
    let last = run.series.last().expect("at least the initial record");
    r.observables.insert("amplitude_scale".into(), p.amplitude_scale);
    r.observables.insert("blowup".into(), run.blowup as u8 as f64);
    if let Some(t) = run.blowup_time {
        r.observables.insert("blowup_time".into(), t);
    }
    r.observables.insert("t_reached".into(), last.t);
    r.observables.insert("sup_l2_theta".into(), run.sup_l2());
    r.observables.insert("final_l2_theta".into(), last.l2_theta);
    r.observables.insert("final_max_density".into(), last.max_density);
    r.observables.insert("steps".into(), (run.series.len() - 1) as f64);
    Ok(())
}

fn obs(r: &PointReport, key: &str) -> Option<f64> {
    r.observables.get(key).copied()
}

fn aggregate_checks(cfg: &ExperimentConfig, mode: RunMode, pts: &[Point], reports: &mut [PointReport]) -> Vec<Check> {
    let mut checks = Vec::new();
    let ok: Vec<(&Point, &PointReport)> = pts
        .iter()
        .zip(reports.iter())
        .filter(|(_, r)| r.error.is_none())
        .collect();
    let complete = ok.len() == pts.len();
    let sc = cfg.scenario;
    if mode == RunMode::DissipationTime || sc.is_tdis() {
        let param = cfg.sweep.as_ref().map(|s| s.parameter);
        let series: Vec<(f64, f64)> = ok
            .iter()
            .filter_map(|(p, r)| Some((p.value?, obs(r, "t_dis")?)))
            .collect();
        if series.len() >= 2 {
            if let Ok(fit) = fit_power_law(&series, Window::all()) {
                let slope = fit.exponent_or_rate;
                let name = format!("t_dis_slope_vs_{}", param.map_or("value", |p| p.name()));
                let heat = cfg.flow == FlowSpec::Zero;
                match (sc, param) {
                    _ if heat => checks.push(Check::new(&name, slope, "reported", true)),
                    (Scenario::ShearTdisScaling, Some(SweepParam::Kappa)) => {
                        let m = kolmogorov_order(&cfg.flow).unwrap_or(2) as f64;
                        let target = -m / (m + 2.0);
                        checks.push(Check::new(
                            &name,
                            slope,
                            format!("within 0.1 of {target:.4}"),
                            complete && (slope - target).abs() <= 0.1,
                        ));
                    }
                    (Scenario::CellularTdisScaling, Some(SweepParam::A)) => checks.push(Check::new(
                        &name,
                        slope,
                        "in [-0.7, -0.3]",
                        complete && (-0.7..=-0.3).contains(&slope),
                    )),
                    _ => checks.push(Check::new(&name, slope, "reported", true)),
                }
            }
        }
        if sc == Scenario::PierrehumbertTdisScaling && param == Some(SweepParam::Kappa) && cfg.flow != FlowSpec::Zero {
            let mut ratios: Vec<(f64, f64)> = series.iter().map(|&(k, t)| (k, t / k.ln().powi(2))).collect();
            ratios.sort_by(|a, b| b.0.total_cmp(&a.0));
            let worst_rise = ratios
                .windows(2)
                .map(|w| w[1].1 - w[0].1)
                .fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::new(
                "t_dis_over_ln_kappa_sq_nonincreasing",
                worst_rise,
                "largest rise as kappa decreases <= 0",
                complete && worst_rise <= 0.0,
            ));
        }
        for r in reports.iter_mut() {
            if let (Some(k), Some(t)) = (r.value.filter(|_| param == Some(SweepParam::Kappa)), obs(r, "t_dis")) {
                r.observables.insert("t_dis_over_ln_kappa_sq".into(), t / k.ln().powi(2));
            }
        }
        return checks;
    }

    match sc {
        Scenario::AnomalousDissipation => {
            let mut by_kappa: Vec<(f64, Option<f64>, Option<f64>)> = ok
                .iter()
                .map(|(p, r)| (p.solver.kappa, obs(r, "dissipated_fraction"), obs(r, "dissipated_fraction_contrast")))
                .collect();
            by_kappa.sort_by(|a, b| b.0.total_cmp(&a.0));
            if let Some(&(_, Some(reference), contrast_ref)) = by_kappa.first() {
                let worst = by_kappa.iter().filter_map(|x| x.1).fold(f64::INFINITY, f64::min);
                checks.push(Check::new(
                    "dissipated_fraction_persists",
                    worst / reference,
                    "min fraction >= 0.5 x the largest-kappa fraction",
                    complete && worst >= 0.5 * reference,
                ));
                checks.push(Check::new(
                    "dissipated_fraction_floor",
                    worst,
                    ">= 0.05",
                    complete && worst >= 0.05,
                ));
                if let (Some(c0), Some(&(_, _, Some(c1)))) = (contrast_ref, by_kappa.last()) {
                    let drop = c0 / c1;
                    checks.push(Check::new(
                        "contrast_fraction_drop",
                        drop,
                        ">= 5 from the largest to the smallest kappa",
                        complete && drop >= 5.0,
                    ));
                }
            }
        }
        Scenario::KellerSegelSuppression => {
            let mut runs: Vec<(f64, f64, f64)> = ok
                .iter()
                .map(|(p, r)| {
                    (
                        p.amplitude_scale,
                        obs(r, "blowup_time").unwrap_or(f64::INFINITY),
                        obs(r, "t_reached").unwrap_or(0.0),
                    )
                })
                .collect();
            runs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let k = &cfg.keller_segel;
            if let Some(&(a0, t0, _)) = runs.first() {
                checks.push(Check::new(
                    "baseline_blows_up",
                    t0,
                    format!("blow-up before t = {} at amplitude_scale {a0}", k.blowup_by),
                    complete && a0 == 0.0 && t0 < k.blowup_by,
                ));
            }
            if let Some(&(a1, t1, reached)) = runs.last() {
                checks.push(Check::new(
                    "strongest_stirring_survives",
                    reached,
                    format!("no blow-up up to t = {} at amplitude_scale {a1}", k.t_final),
                    complete && t1.is_infinite() && reached >= k.t_final * (1.0 - 1e-12),
                ));
            }
            let monotone = runs.windows(2).all(|w| w[1].1 >= w[0].1);
            checks.push(Check::new(
                "blowup_time_nondecreasing",
                monotone as u8 as f64,
                "first blow-up time nondecreasing in amplitude_scale",
                complete && monotone,
            ));
        }
        _ => {}
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHEAR: &str = r#"
scenario = "shear_mixing_rate"
output_dir = "out"
initial_data = "mode(1,0)"
t_final = 8.0

[flow]
variant = "shear"
m = 2
amplitude = 1.0

[solver]
n = 64
dt = 0.25
"#;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    #[test]
    fn initial_data_syntax() {
        assert_eq!("mode(1,0)".parse::<InitialData>().unwrap(), InitialData::Mode { k1: 1, k2: 0 });
        assert_eq!(
            " random(7, 4) ".parse::<InitialData>().unwrap(),
            InitialData::Random { seed: 7, band: 4 }
        );
        for bad in ["mode(1)", "mode 1,0", "wave(1,0)", "random(-1,2)", "mode(a,b)"] {
            assert!(bad.parse::<InitialData>().is_err(), "{bad}");
        }
        let d = InitialData::Random { seed: 3, band: 2 };
        assert_eq!(d.to_string().parse::<InitialData>().unwrap(), d);
    }

    #[test]
    fn initial_data_is_exactly_mean_zero() {
        let g = Grid::new(32).unwrap();
        for d in [InitialData::Mode { k1: 1, k2: 2 }, InitialData::Random { seed: 1, band: 3 }] {
            assert_eq!(d.build(g).unwrap().spectrum()[0].norm(), 0.0);
        }
        assert!(InitialData::Mode { k1: 0, k2: 0 }.build(g).is_err());
        assert!(InitialData::Mode { k1: 16, k2: 0 }.build(g).is_err());
    }

    #[test]
    fn well_formed_config_validates() {
        assert_eq!(validate_config(&cfg(SHEAR)), vec![]);
    }

    #[test]
    fn sweep_table_parses() {
        let c = cfg(&format!("{SHEAR}\n[sweep]\nm = [2, 4]\n"));
        let s = c.sweep.unwrap();
        assert_eq!(s.parameter, SweepParam::M);
        assert_eq!(s.values, vec![2.0, 4.0]);
        assert!(ExperimentConfig::from_toml_str(&format!("{SHEAR}\n[sweep]\nm = [2]\nkappa = [1.0]\n")).is_err());
        assert!(ExperimentConfig::from_toml_str(&format!("{SHEAR}\n[sweep]\nbogus = [2]\n")).is_err());
    }

    #[test]
    fn sweep_sanity_violations() {
        let c = cfg(&format!("{SHEAR}\n[sweep]\nm = [2, 2, 0, 2.5]\n"));
        let v: Vec<String> = validate_config(&c).iter().map(|v| v.to_string()).collect();
        assert!(v.iter().any(|s| s.contains("repeated")), "{v:?}");
        assert!(v.iter().any(|s| s.contains("positive")), "{v:?}");
        assert!(v.iter().any(|s| s.contains("integer")), "{v:?}");
        let c = cfg(&format!("{SHEAR}\n[sweep]\nA = [1.0, 2.0]\n"));
        assert!(validate_config(&c).iter().any(|v| v.message.contains("does not apply")));
    }

    #[test]
    fn cascade_beyond_nyquist_is_reported() {
        let c = cfg(r#"
scenario = "anomalous_dissipation"
output_dir = "out"
[flow]
variant = "self_similar_cascade"
alpha = 0.33
T = 2.0
lambda_ratio = 0.3333333333333333
n_stages = 6
seed = 1
[solver]
n = 256
kappa = 1e-4
dt = 0.01
[sweep]
kappa = [1e-4, 1e-5]
"#);
        let v = validate_config(&c);
        assert!(v.iter().any(|v| v.message.contains("stage frequency exceeds Nyquist")), "{v:?}");
    }

    #[test]
    fn cellular_dt_too_large_is_a_stability_violation() {
        let c = cfg(r#"
scenario = "cellular_tdis_scaling"
output_dir = "out"
[flow]
variant = "cellular"
A = 4.0
eps = 0.125
[solver]
n = 64
kappa = 1e-3
dt = 0.01
[sweep]
A = [4.0, 8.0]
"#);
        let v = validate_config(&c);
        assert!(v.iter().any(|v| v.message.starts_with("stability")), "{v:?}");
    }

    #[test]
    fn scenario_flow_and_kappa_mismatches() {
        let mut c = cfg(SHEAR);
        c.solver.kappa = 1e-3;
        c.flow = FlowSpec::Zero;
        let v = validate_config(&c);
        assert!(v.iter().any(|v| v.field == "flow"));
        assert!(v.iter().any(|v| v.field == "solver.kappa"));
        let mut c = cfg(SHEAR);
        c.scenario = Scenario::ShearTdisScaling;
        assert!(validate_config(&c).iter().any(|v| v.field == "sweep"));
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = cfg(SHEAR);
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.solver.dt = 0.125;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn scenario_run_writes_report_and_passes() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(SHEAR);
        c.output_dir = dir.path().to_path_buf();
        c.t_final = Some(16.0);
        c.solver.grid = Grid::new(256).unwrap();
        let rep = run_scenario(&c).unwrap();
        assert!(rep.pass, "{:?}", rep.failed_checks());
        let e = rep.points[0].fits["hminus1"].exponent_or_rate;
        assert!((e + 0.5).abs() < 0.1);
        let json = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        assert!(dir.path().join("p0.csv").exists());
    }

    #[test]
    fn point_errors_do_not_abort_the_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(SHEAR);
        c.output_dir = dir.path().to_path_buf();
        // a fit window with no samples fails the fit at every point
        c.fit = Window::between(100.0, 200.0);
        c.sweep = Some(Sweep { parameter: SweepParam::Amplitude, values: vec![1.0, 2.0] });
        let rep = run_scenario(&c).unwrap();
        assert_eq!(rep.points.len(), 2);
        assert!(rep.points.iter().all(|p| p.error.is_some()));
        assert!(!rep.pass);
    }

    #[test]
    fn invalid_config_is_rejected_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(SHEAR);
        c.output_dir = dir.path().join("never");
        c.initial_data = InitialData::Mode { k1: 0, k2: 0 };
        assert!(run_scenario(&c).is_err());
        assert!(!c.output_dir.exists());
    }
}
