use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mixlab_core::diagnostics::{fit_exponential, fit_power_law, Window};
use mixlab_core::experiments::{
    run_dissipation_time, run_scenario, run_simulate, validate_config, ExperimentConfig, Report,
    Scenario, REPORT_FILE,
};
use mixlab_core::io::load_series_csv;

/// Exit status when a run completes but some acceptance check fails.
const EXIT_CHECKS_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "mixlab", version, about = "Passive scalar mixing experiments on the 2D torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Advance the initial data under the flow at every sweep point
    Simulate(RunArgs),
    /// Run the config's scenario over its sweep and evaluate its checks
    Sweep(RunArgs),
    /// Measure the dissipation time at every sweep point
    DissipationTime(RunArgs),
    /// Fit a decay law to one column of a trajectory CSV
    Fit(FitArgs),
    /// Keller-Segel blow-up suppression runs
    Ks(RunArgs),
    /// Compare the Monte Carlo representation with the spectral solver
    OracleCheck(RunArgs),
    /// List the reasons a config cannot run
    Validate {
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Replace the config's output_dir
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads for the sweep (MIXLAB_WORKERS takes precedence)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Power,
    Exponential,
}

#[derive(Clone, Copy, ValueEnum)]
enum Column {
    #[value(name = "h_minus_1")]
    HMinus1,
    #[value(name = "h1")]
    H1,
    #[value(name = "l2")]
    L2,
}

#[derive(Args)]
struct FitArgs {
    csv: PathBuf,
    #[arg(long, value_enum, default_value = "power")]
    kind: Kind,
    #[arg(long, value_enum, default_value = "h_minus_1")]
    column: Column,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
}

fn load(args: &RunArgs, scenario: Option<Scenario>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    if let Some(sc) = scenario {
        if cfg.scenario != sc {
            bail!(
                "{}: scenario is {}, this subcommand runs {}",
                args.config.display(),
                cfg.scenario,
                sc
            );
        }
    }
    Ok(cfg)
}

fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-3..1e6).contains(&a) {
        format!("{}", (v * 1e6).round() / 1e6)
    } else {
        format!("{v:.4e}")
    }
}

fn print_check(indent: &str, c: &mixlab_core::experiments::Check) {
    let status = if c.pass { "ok  " } else { "FAIL" };
    println!("{indent}{status} {} = {} ({})", c.name, num(c.value), c.criterion);
}

fn summarize(report: &Report, dir: &Path) -> ExitCode {
    for p in &report.points {
        let at = p.value.map_or(String::new(), |v| format!(" {}={v}", report.sweep_parameter.as_deref().unwrap_or("value")));
        let status = if p.pass { "pass" } else { "FAIL" };
        println!("point {}{at}: {status}", p.index);
        if let Some(e) = &p.error {
            println!("  error: {e}");
        }
        for c in &p.checks {
            print_check("  ", c);
        }
    }
    for c in &report.checks {
        print_check("", c);
    }
    println!(
        "{}: {} ({})",
        report.scenario,
        if report.pass { "pass" } else { "FAIL" },
        dir.join(REPORT_FILE).display()
    );
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECKS_FAILED)
    }
}

fn fit(args: &FitArgs) -> Result<()> {
    let series = load_series_csv(&args.csv).with_context(|| format!("reading {}", args.csv.display()))?;
    let pairs: Vec<(f64, f64)> = series
        .iter()
        .map(|r| {
            let v = match args.column {
                Column::HMinus1 => r.h_minus_1,
                Column::H1 => r.h1,
                Column::L2 => r.l2,
            };
            (r.t, v)
        })
        .collect();
    let window = Window {
        t_min: args.t_min,
        t_max: args.t_max,
    };
    let f = match args.kind {
        Kind::Power => fit_power_law(&pairs, window)?,
        Kind::Exponential => fit_exponential(&pairs, window)?,
    };
    let out = serde_json::json!({
        "kind": f.kind,
        "exponent_or_rate": f.exponent_or_rate,
        "intercept": f.intercept,
        "r_squared": f.r_squared,
        "t_min": f.t_min,
        "t_max": f.t_max,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    let (cfg, runner): (ExperimentConfig, fn(&ExperimentConfig) -> mixlab_core::Result<Report>) =
        match &cli.command {
            Command::Fit(args) => {
                fit(args)?;
                return Ok(ExitCode::SUCCESS);
            }
            Command::Validate { config } => {
                let cfg = ExperimentConfig::load(config)?;
                let v = validate_config(&cfg);
                if v.is_empty() {
                    println!("{}: ok ({})", config.display(), cfg.scenario);
                    return Ok(ExitCode::SUCCESS);
                }
                for x in &v {
                    println!("{x}");
                }
                return Ok(ExitCode::FAILURE);
            }
            Command::Simulate(a) => (load(a, None)?, run_simulate),
            Command::Sweep(a) => (load(a, None)?, run_scenario),
            Command::DissipationTime(a) => (load(a, None)?, run_dissipation_time),
            Command::Ks(a) => (load(a, Some(Scenario::KellerSegelSuppression))?, run_scenario),
            Command::OracleCheck(a) => (load(a, Some(Scenario::OracleCheck))?, run_scenario),
        };
    let report = runner(&cfg)?;
    Ok(summarize(&report, &cfg.output_dir))
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
