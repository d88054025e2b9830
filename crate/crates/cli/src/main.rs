//! Batch driver: single runs, convergence experiments and the acceptance suite.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use thermodamage::acceptance::{self, CriterionOutcome, DEFAULT_SEED};
use thermodamage::config::{self, Report, RunConfig, PRESETS};
use thermodamage::diagnostics::{
    continuous_dependence_experiment, delta_sweep, energy_ledger_check, ledger, tau_refinement, LedgerCheck,
};
use thermodamage::stepper::Scheme;

/// Relative ledger defect allowed per step.
const LEDGER_TOL: f64 = 1e-8;
/// Relative violation allowed for the phase-field energy inequality.
const INEQ_TOL: f64 = 1e-9;
/// Smallest acceptable observed rate under τ-halving.
const MIN_RATE: f64 = 0.4;
/// Quasi-stress momentum residual allowed on the undamaged set.
const MOMENTUM_TOL: f64 = 1e-11;
const SLOPE_RANGE: (f64, f64) = (0.9, 1.1);

#[derive(Parser)]
#[command(name = "thermodamage", version, about = "Thermoviscoelastic phase-transition and damage solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration (see `presets`).
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory (default: `output.dir` of the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// `key.path=value` applied to the config, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Single run: ledger.csv, field snapshots and report.json.
    Run(Common),
    /// Same scenario for a sequence of δ.
    SweepDelta(Common),
    /// Same scenario for τ, τ/2, … .
    RefineTau(Common),
    /// Perturbed data with shrinking amplitude.
    Contdep(Common),
    /// Acceptance suite.
    Check {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Directory for report.json.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Comma separated criterion ids (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
    },
    /// List built-in configurations, or print one as TOML.
    Presets {
        #[arg(long, value_name = "NAME")]
        dump: Option<String>,
    },
}

fn load(c: &Common, default_preset: &str) -> Result<RunConfig> {
    let cfg = match (&c.config, &c.preset) {
        (Some(path), _) => config::load_config(path, &c.overrides).with_context(|| format!("loading {}", path.display()))?,
        (None, p) => {
            let name = p.as_deref().unwrap_or(default_preset);
            let base = config::preset(name)?;
            RunConfig::from_toml_str(&base.to_toml_string()?, &c.overrides)?
        }
    };
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = c.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn finish<T: Serialize>(dir: &Path, experiment: &str, cfg: &RunConfig, checks: Vec<(String, bool)>, data: T) -> Result<bool> {
    let passed = checks.iter().all(|(_, ok)| *ok);
    for (name, ok) in &checks {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    let report = Report { experiment: experiment.into(), config_hash: cfg.hash()?, passed, checks, data };
    let path = dir.join("report.json");
    config::write_report_json(&path, &report)?;
    println!("wrote {}", path.display());
    Ok(passed)
}

#[derive(Serialize)]
struct RunData {
    steps: usize,
    ledger: LedgerCheck,
    min_w: f64,
    min_chi: f64,
    max_chi: f64,
    snapshots: Vec<String>,
}

fn cmd_run(c: &Common) -> Result<bool> {
    let cfg = load(c, "reversible-1d")?;
    let dir = out_dir(c, &cfg)?;
    let sc = cfg.scenario()?;
    let traj = sc.run()?;
    let led = ledger(&sc.problem, &traj)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("ledger.csv"))?);
    config::write_ledger_csv(&mut f, &led, &traj)?;
    drop(f);
    let snapshots = config::write_field_snapshots(&dir, &sc.problem.mesh, &traj, sc.problem.schedule.tau, cfg.output.snapshot_every)?;

    let scheme = sc.problem.scheme;
    let chk = energy_ledger_check(&led, scheme, LEDGER_TOL, INEQ_TOL);
    let min_w = traj.reports.iter().map(|r| r.min_w).fold(f64::INFINITY, f64::min);
    let mut checks = vec![(format!("energy ledger (max defect {:.2e}, flagged {:?})", chk.max_defect, chk.flagged_steps), chk.passed)];
    if scheme.is_irreversible() {
        checks.push(("chi non-increasing".into(), traj.reports.iter().all(|r| r.chi_monotone)));
    }
    if !scheme.is_isothermal() {
        checks.push((format!("positive enthalpy (min {min_w:.3e})"), min_w > 0.0));
    }
    let data = RunData {
        steps: traj.reports.len(),
        min_w,
        min_chi: traj.reports.iter().map(|r| r.min_chi).fold(f64::INFINITY, f64::min),
        max_chi: traj.reports.iter().map(|r| r.max_chi).fold(f64::NEG_INFINITY, f64::max),
        ledger: chk,
        snapshots,
    };
    finish(&dir, "single_run", &cfg, checks, data)
}

fn cmd_sweep(c: &Common) -> Result<bool> {
    let cfg = load(c, "damage-1d")?;
    let dir = out_dir(c, &cfg)?;
    let e = &cfg.experiment;
    if e.deltas.is_empty() {
        bail!("experiment.deltas is empty");
    }
    let rep = delta_sweep(&cfg.scenario()?, &e.deltas, e.chi_threshold)?;
    let max_res = rep.rows.iter().map(|r| r.max_momentum_residual).fold(0.0, f64::max);
    let checks = vec![
        (format!("mu ratio {:.3} <= {}", rep.mu_ratio, e.sweep_factor), rep.mu_ratio <= e.sweep_factor),
        (format!("eta ratio {:.3} <= {}", rep.eta_ratio, e.sweep_factor), rep.eta_ratio <= e.sweep_factor),
        (format!("momentum residual {max_res:.2e} <= {MOMENTUM_TOL:e}"), max_res <= MOMENTUM_TOL),
        ("chi non-increasing".into(), rep.rows.iter().all(|r| r.chi_monotone)),
    ];
    finish(&dir, "delta_sweep", &cfg, checks, rep)
}

fn cmd_refine(c: &Common) -> Result<bool> {
    let cfg = load(c, "irreversible-1d")?;
    let dir = out_dir(c, &cfg)?;
    let sc = cfg.scenario()?;
    let rep = tau_refinement(&sc, cfg.experiment.halvings)?;
    let mut checks = vec![
        ("distances decrease".into(), rep.monotone),
        (format!("min rate {:.3} >= {MIN_RATE}", rep.min_rate), rep.min_rate >= MIN_RATE),
    ];
    if sc.problem.scheme.is_irreversible() {
        checks.push((format!("inequality slack {:.2e} >= -{INEQ_TOL:e}", rep.min_ineq_slack), rep.min_ineq_slack >= -INEQ_TOL));
    }
    finish(&dir, "tau_refinement", &cfg, checks, rep)
}

fn cmd_contdep(c: &Common) -> Result<bool> {
    let cfg = load(c, "contdep-1d")?;
    let dir = out_dir(c, &cfg)?;
    let e = &cfg.experiment;
    if e.epsilons.len() < 2 {
        bail!("experiment.epsilons needs at least two values");
    }
    let rep = continuous_dependence_experiment(&cfg.scenario()?, &e.perturbation.to_perturbation(), &e.epsilons)?;
    let ok = (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&rep.slope);
    let checks = vec![(format!("slope {:.4} in [{}, {}]", rep.slope, SLOPE_RANGE.0, SLOPE_RANGE.1), ok)];
    finish(&dir, "continuous_dependence", &cfg, checks, rep)
}

#[derive(Serialize)]
struct CheckReport {
    seed: u64,
    passed: bool,
    criteria: Vec<CriterionOutcome>,
}

fn cmd_check(seed: u64, out: Option<&Path>, only: &[usize]) -> Result<bool> {
    let ids: Vec<usize> = if only.is_empty() { acceptance::CRITERIA.iter().map(|c| c.0).collect() } else { only.to_vec() };
    if let Some(bad) = ids.iter().find(|&&i| !(1..=acceptance::CRITERIA.len()).contains(&i)) {
        bail!("unknown criterion {bad}");
    }
    let mut criteria = Vec::new();
    for id in ids {
        let o = acceptance::run_criterion(id, seed);
        println!("{o}");
        criteria.push(o);
    }
    let passed = criteria.iter().all(|o| o.passed);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(&CheckReport { seed, passed, criteria })?;
        std::fs::write(dir.join("report.json"), text)?;
    }
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::SweepDelta(c) => cmd_sweep(c),
        Command::RefineTau(c) => cmd_refine(c),
        Command::Contdep(c) => cmd_contdep(c),
        Command::Check { seed, out, only } => cmd_check(*seed, out.as_deref(), only),
        Command::Presets { dump: Some(name) } => {
            config::preset(name).and_then(|c| c.to_toml_string()).map(|t| print!("{t}")).map(|_| true).map_err(Into::into)
        }
        Command::Presets { dump: None } => {
            for p in PRESETS {
                let scheme: Scheme = config::preset(p).map(|c| c.scheme).unwrap_or(Scheme::Reversible);
                println!("{p:<28} {scheme:?}");
            }
            Ok(true)
        }
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
