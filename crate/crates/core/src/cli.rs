//! Command-line front end: single runs, parameter sweeps, cross-validation,
//! and mean-field trajectory export.
//!
//! Configs are flat `key = value` text files whose keys match the
//! [`SystemConfig`] field names exactly. Sweep plans reuse those keys plus a
//! sweep axis (`d_list`, `gamma_list`, `m_list` or `load_list`), a `seeds`
//! list and run sizing. An `m` sweep holds `lambda/(r*mu)` fixed by
//! rescaling `lambda` (matched-load comparison); a `load` sweep sets
//! `lambda = load * r * mu`.
//!
//! Sweep output is a versioned CSV with one row per (point, seed), written
//! in plan order regardless of the worker pool, so fixed inputs give
//! byte-identical files.

use crate::config::{ConfigError, Policy, SamplingMode, SystemConfig, ValidatedConfig};
use crate::equilibrium::{jsq_equilibrium, slq_equilibrium, EquilibriumProfile, DEFAULT_TAIL_TOL};
use crate::meanfield::{
    self, find_fixed_point_by_relaxation, integrate, IntegrateOptions, MeanFieldState,
};
use crate::metrics::{MetricsReport, Prediction};
use crate::oracle::{build_generator, exact_metrics, CtmcSpec};
use crate::sim::{run_simulation, QueueSampler, SimOutput};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use thiserror::Error;

pub const DESK_SCALE_ARRIVALS: u64 = 10_000_000;
pub const PAPER_SCALE_ARRIVALS: u64 = 1_000_000_000;
pub const DEFAULT_WARMUP: f64 = 0.1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigError>),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    /// Config and plan problems exit with 2; runtime failures with 1.
    fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Io { .. } | CliError::Parse { .. } | CliError::Invalid(_) => {
                ExitCode::from(2)
            }
            CliError::Other(_) => ExitCode::FAILURE,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "slqsim", version, about = "Queue-sampling switch simulator and analyzer")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one simulation plus its analytic prediction.
    Run(RunArgs),
    /// Run a sweep plan and emit a CSV table.
    Sweep(SweepArgs),
    /// Cross-validate the simulator, equilibrium and exact-chain modules.
    Verify(VerifyArgs),
    /// Integrate the mean-field ODEs from the empty state and export the
    /// trajectory as CSV.
    Trajectory(TrajectoryArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Path to a key=value config file.
    config: PathBuf,
    /// Override the configured policy (slq or jsq).
    #[arg(long)]
    policy: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of job arrivals to simulate.
    #[arg(long, default_value_t = DESK_SCALE_ARRIVALS)]
    arrivals: u64,
    /// Fraction of arrivals excluded from statistics as warm-up.
    #[arg(long, default_value_t = DEFAULT_WARMUP)]
    warmup: f64,
    /// Skip the simulation; report equilibrium predictions only.
    #[arg(long)]
    analytic_only: bool,
    /// Use the full 1e9-arrival run length.
    #[arg(long)]
    paper_scale: bool,
    /// Write the JSON report (or, with --analytic-only, the profile CSV) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a CSV comparing simulated and analytic queue-length densities.
    #[arg(long)]
    density_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Path to a sweep plan file.
    plan: PathBuf,
    /// Worker threads for sweep points (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Arrivals per verification simulation.
    #[arg(long, default_value_t = 1_000_000)]
    arrivals: u64,
}

#[derive(Args, Debug)]
struct TrajectoryArgs {
    config: PathBuf,
    #[arg(long)]
    t_end: f64,
    /// Step size (defaults to 0.01 * min(1/lambda, 1/mu, 1/gamma)).
    #[arg(long)]
    dt: Option<f64>,
    /// Truncation horizon of the tail vector.
    #[arg(long, default_value_t = meanfield::DEFAULT_I_MAX)]
    i_max: usize,
    /// Record every k-th step.
    #[arg(long, default_value_t = 100)]
    stride: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point used by the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Verify(args) => cmd_verify(&args),
        Command::Trajectory(args) => cmd_trajectory(&args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// config file parsing

fn read_kv_file(path: &Path) -> Result<Vec<(usize, String, String)>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("expected key = value, got {line:?}"),
        })?;
        out.push((
            lineno + 1,
            key.trim().to_string(),
            value.trim().to_string(),
        ));
    }
    Ok(out)
}

struct KvReader<'a> {
    path: &'a Path,
    entries: Vec<(usize, String, String)>,
    used: Vec<bool>,
}

impl<'a> KvReader<'a> {
    fn new(path: &'a Path) -> Result<Self, CliError> {
        let entries = read_kv_file(path)?;
        let mut seen = std::collections::HashSet::new();
        for (line, key, _) in &entries {
            if !seen.insert(key.clone()) {
                return Err(CliError::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    msg: format!("duplicate key {key:?}"),
                });
            }
        }
        let used = vec![false; entries.len()];
        Ok(KvReader {
            path,
            entries,
            used,
        })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        for (i, (line, k, v)) in self.entries.iter().enumerate() {
            if k == key {
                self.used[i] = true;
                return Some((*line, v.clone()));
            }
        }
        None
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| CliError::Parse {
                path: self.path.to_path_buf(),
                line,
                msg: format!("cannot parse {key} value {v:?}"),
            }),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, CliError> {
        self.parse(key)?.ok_or_else(|| CliError::Parse {
            path: self.path.to_path_buf(),
            line: 0,
            msg: format!("missing required key {key:?}"),
        })
    }

    fn parse_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| CliError::Parse {
                    path: self.path.to_path_buf(),
                    line,
                    msg: format!("cannot parse {key} list {v:?}"),
                }),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        for (i, used) in self.used.iter().enumerate() {
            if !used {
                let (line, key, _) = &self.entries[i];
                return Err(CliError::Parse {
                    path: self.path.to_path_buf(),
                    line: *line,
                    msg: format!("unknown key {key:?}"),
                });
            }
        }
        Ok(())
    }
}

fn parse_policy(path: &Path, line: usize, v: &str) -> Result<Policy, CliError> {
    match v.to_ascii_lowercase().as_str() {
        "slq" => Ok(Policy::Slq),
        "jsq" => Ok(Policy::Jsq),
        other => Err(CliError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("unknown policy {other:?} (expected slq or jsq)"),
        }),
    }
}

fn parse_mode(path: &Path, line: usize, v: &str) -> Result<SamplingMode, CliError> {
    match v.to_ascii_lowercase().as_str() {
        "with_replacement" => Ok(SamplingMode::WithReplacement),
        "without_replacement" => Ok(SamplingMode::WithoutReplacement),
        other => Err(CliError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!(
                "unknown sampling_mode {other:?} (expected with_replacement or without_replacement)"
            ),
        }),
    }
}

fn config_from_reader(kv: &mut KvReader) -> Result<SystemConfig, CliError> {
    let policy = match kv.take("policy") {
        Some((line, v)) => parse_policy(kv.path, line, &v)?,
        None => Policy::Slq,
    };
    let sampling_mode = match kv.take("sampling_mode") {
        Some((line, v)) => parse_mode(kv.path, line, &v)?,
        None => SamplingMode::WithoutReplacement,
    };
    Ok(SystemConfig {
        n: kv.require("n")?,
        m: kv.require("m")?,
        d: kv.require("d")?,
        lambda: kv.require("lambda")?,
        mu: kv.require("mu")?,
        gamma: kv.require("gamma")?,
        policy,
        sampling_mode,
    })
}

/// Parses a flat key=value config file.
pub fn parse_config_file(path: &Path) -> Result<SystemConfig, CliError> {
    let mut kv = KvReader::new(path)?;
    let cfg = config_from_reader(&mut kv)?;
    kv.finish()?;
    Ok(cfg)
}

/// Canonical serialization; `parse -> serialize -> parse` is the identity.
pub fn serialize_config(cfg: &SystemConfig) -> String {
    format!(
        "n = {}\nm = {}\nd = {}\nlambda = {}\nmu = {}\ngamma = {}\npolicy = {}\nsampling_mode = {}\n",
        cfg.n, cfg.m, cfg.d, cfg.lambda, cfg.mu, cfg.gamma, cfg.policy, cfg.sampling_mode
    )
}

/// One sweep axis.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    DList(Vec<u32>),
    GammaList(Vec<f64>),
    MList(Vec<u32>),
    LoadList(Vec<f64>),
}

impl SweepAxis {
    fn name(&self) -> &'static str {
        match self {
            SweepAxis::DList(_) => "d",
            SweepAxis::GammaList(_) => "gamma",
            SweepAxis::MList(_) => "m",
            SweepAxis::LoadList(_) => "load",
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            SweepAxis::DList(v) => v.iter().map(|&x| x as f64).collect(),
            SweepAxis::GammaList(v) => v.clone(),
            SweepAxis::MList(v) => v.iter().map(|&x| x as f64).collect(),
            SweepAxis::LoadList(v) => v.clone(),
        }
    }
}

/// A parsed sweep plan.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub base: SystemConfig,
    pub axis: SweepAxis,
    pub seeds: Vec<u64>,
    pub n_arrivals: u64,
    pub warmup_fraction: f64,
}

impl ExperimentPlan {
    /// The config at one axis value. An `m` sweep and a `load` sweep rescale
    /// `lambda` to hit the requested `lambda/(r*mu)`.
    pub fn point(&self, value: f64) -> SystemConfig {
        let mut cfg = self.base.clone();
        match &self.axis {
            SweepAxis::DList(_) => cfg.d = value as u32,
            SweepAxis::GammaList(_) => cfg.gamma = value,
            SweepAxis::MList(_) => {
                let base_load =
                    self.base.lambda / (self.base.m as f64 / self.base.n as f64 * self.base.mu);
                cfg.m = value as u32;
                let r = cfg.m as f64 / cfg.n as f64;
                cfg.lambda = base_load * r * cfg.mu;
            }
            SweepAxis::LoadList(_) => {
                let r = cfg.m as f64 / cfg.n as f64;
                cfg.lambda = value * r * cfg.mu;
            }
        }
        cfg
    }

    /// Validates every swept point before any run starts.
    pub fn validate_all(&self) -> Result<(), CliError> {
        for value in self.axis.values() {
            self.point(value)
                .validate()
                .map_err(CliError::Invalid)?;
        }
        if self.seeds.is_empty() {
            return Err(CliError::Other("plan needs at least one seed".into()));
        }
        Ok(())
    }
}

/// Parses a sweep plan file (config keys plus exactly one of `d_list`,
/// `gamma_list`, `m_list`, `load_list`, and optional `seeds`, `n_arrivals`,
/// `warmup_fraction`).
pub fn parse_plan_file(path: &Path) -> Result<ExperimentPlan, CliError> {
    let mut kv = KvReader::new(path)?;
    let base = config_from_reader(&mut kv)?;
    let mut axes: Vec<SweepAxis> = Vec::new();
    if let Some(v) = kv.parse_list::<u32>("d_list")? {
        axes.push(SweepAxis::DList(v));
    }
    if let Some(v) = kv.parse_list::<f64>("gamma_list")? {
        axes.push(SweepAxis::GammaList(v));
    }
    if let Some(v) = kv.parse_list::<u32>("m_list")? {
        axes.push(SweepAxis::MList(v));
    }
    if let Some(v) = kv.parse_list::<f64>("load_list")? {
        axes.push(SweepAxis::LoadList(v));
    }
    if axes.len() != 1 {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!(
                "plan must set exactly one of d_list, gamma_list, m_list, load_list (found {})",
                axes.len()
            ),
        });
    }
    let seeds = kv.parse_list::<u64>("seeds")?.unwrap_or_else(|| vec![1]);
    let n_arrivals = kv.parse::<u64>("n_arrivals")?.unwrap_or(DESK_SCALE_ARRIVALS);
    let warmup_fraction = kv.parse::<f64>("warmup_fraction")?.unwrap_or(DEFAULT_WARMUP);
    kv.finish()?;
    let plan = ExperimentPlan {
        base,
        axis: axes.into_iter().next().unwrap(),
        seeds,
        n_arrivals,
        warmup_fraction,
    };
    plan.validate_all()?;
    Ok(plan)
}

// ---------------------------------------------------------------------------
// predictions

/// Analytic prediction for a validated config, if the load admits one.
pub fn predict(cfg: &ValidatedConfig) -> Result<(Prediction, EquilibriumProfile), String> {
    let p = cfg.params();
    match cfg.policy {
        Policy::Slq => slq_equilibrium(&p, DEFAULT_TAIL_TOL)
            .map(|prof| {
                (
                    Prediction {
                        response_time: prof.predicted_response_time(cfg.lambda, cfg.mu),
                        busy_fraction: prof.epsilon(),
                        mean_queue: prof.mean_queue_size(),
                    },
                    prof,
                )
            })
            .map_err(|e| e.to_string()),
        Policy::Jsq => jsq_equilibrium(&p, DEFAULT_TAIL_TOL)
            .map(|prof| {
                // Server queues count the job in service, so Little's law on
                // m*q over n*lambda already yields the full response time.
                (
                    Prediction {
                        response_time: prof.mean_queue_size() * p.r / cfg.lambda,
                        busy_fraction: prof.epsilon(),
                        mean_queue: prof.mean_queue_size(),
                    },
                    prof,
                )
            })
            .map_err(|e| e.to_string()),
    }
}

/// Assembles the side-by-side report for one run.
pub fn report(sim: &SimOutput, prediction: Option<&Prediction>) -> MetricsReport {
    MetricsReport {
        policy: sim.policy.to_string(),
        seed: sim.seed,
        n_arrivals: sim.n_arrivals,
        warmup_fraction: sim.warmup_fraction,
        response_time: sim.response,
        busy_fraction: sim.busy_fraction,
        mean_queue_per_entity: sim.mean_queue_per_entity,
        jobs_in_system_avg: sim.jobs_in_system_avg,
        tail_occupancy: sim.tail_occupancy.clone(),
        predicted_response_time: prediction.map(|p| p.response_time),
        predicted_busy_fraction: prediction.map(|p| p.busy_fraction),
        predicted_mean_queue: prediction.map(|p| p.mean_queue),
        percentage_error: prediction
            .map(|p| 100.0 * (1.0 - p.response_time / sim.response.mean).abs()),
        arrivals: sim.arrivals,
        departures: sim.departures,
        failed_samplings: sim.failed_samplings,
        successful_samplings: sim.successful_samplings,
        simulated_duration: sim.simulated_duration,
        wall_clock_seconds: sim.wall_clock_seconds,
    }
}

// ---------------------------------------------------------------------------
// subcommands

fn load_config(path: &Path, policy_override: Option<&str>) -> Result<ValidatedConfig, CliError> {
    let mut cfg = parse_config_file(path)?;
    if let Some(p) = policy_override {
        cfg.policy = parse_policy(path, 0, p)?;
    }
    let validated = cfg.validate().map_err(CliError::Invalid)?;
    if validated.stability_warning() {
        eprintln!(
            "warning: lambda/(r*mu) = {:.4} >= 1; the system is unstable and analytic predictions are unavailable",
            validated.load_summary().offered_load
        );
    }
    Ok(validated)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode, CliError> {
    let cfg = load_config(&args.config, args.policy.as_deref())?;
    let prediction = predict(&cfg);

    if args.analytic_only {
        match &prediction {
            Ok((pred, prof)) => {
                println!(
                    "{} analytic: w_pred={:.6} s busy_pred={:.6} mean_queue={:.6} (tail bound {:.3e})",
                    cfg.policy,
                    pred.response_time,
                    pred.busy_fraction,
                    pred.mean_queue,
                    prof.tail_mass_bound()
                );
                if let Some(out) = &args.out {
                    let mut buf = Vec::new();
                    prof.write_csv(&mut buf).expect("in-memory write");
                    write_file(out, &String::from_utf8(buf).expect("utf8"))?;
                }
                return Ok(ExitCode::SUCCESS);
            }
            Err(msg) => return Err(CliError::Other(format!("no analytic prediction: {msg}"))),
        }
    }

    let arrivals = if args.paper_scale {
        PAPER_SCALE_ARRIVALS
    } else {
        args.arrivals
    };
    if !(0.0..1.0).contains(&args.warmup) {
        return Err(CliError::Other(format!(
            "warmup must be in [0, 1), got {}",
            args.warmup
        )));
    }
    let sim = run_simulation(&cfg, args.seed, arrivals, args.warmup);
    let rep = report(&sim, prediction.as_ref().ok().map(|(p, _)| p));
    println!("{}", rep.human_line());
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&rep).expect("serializable report");
        write_file(out, &json)?;
    }
    if let Some(out) = &args.density_out {
        let analytic: Vec<f64> = prediction
            .as_ref()
            .ok()
            .map(|(_, prof)| prof.density())
            .unwrap_or_default();
        let mut csv = String::from("i,sim_density,analytic_density\n");
        let rows = sim.level_density.len().max(analytic.len());
        for i in 0..rows {
            let s = sim.level_density.get(i).copied().unwrap_or(0.0);
            let a = analytic.get(i).copied().unwrap_or(0.0);
            let _ = writeln!(csv, "{i},{s},{a}");
        }
        write_file(out, &csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

/// CSV header; versioned so plot scripts and regression tests can key on it.
pub const SWEEP_CSV_HEADER: &str = "axis,value,seed,policy,sampling_mode,n,m,d,lambda,mu,gamma,arrivals,warmup,w_sim,w_ci_half,w_pred,pct_err,busy_sim,busy_pred,q_sim,q_pred,status";

fn sweep_row(plan: &ExperimentPlan, value: f64, seed: u64) -> String {
    let cfg = plan.point(value);
    let validated = match cfg.clone().validate() {
        Ok(v) => v,
        Err(errs) => {
            // validate_all() runs first, so this is unreachable in practice;
            // record the failure in-row regardless.
            return format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},,,,,,,,,invalid: {}",
                plan.axis.name(),
                value,
                seed,
                cfg.policy,
                cfg.sampling_mode,
                cfg.n,
                cfg.m,
                cfg.d,
                cfg.lambda,
                cfg.mu,
                cfg.gamma,
                plan.n_arrivals,
                plan.warmup_fraction,
                errs.len()
            );
        }
    };
    let sim = run_simulation(&validated, seed, plan.n_arrivals, plan.warmup_fraction);
    let (pred, status) = match predict(&validated) {
        Ok((p, _)) => (Some(p), "ok".to_string()),
        Err(msg) => (None, format!("analytic-unavailable: {msg}")),
    };
    let (w_pred, pct, busy_pred, q_pred) = match &pred {
        Some(p) => (
            p.response_time.to_string(),
            (100.0 * (1.0 - p.response_time / sim.response.mean).abs()).to_string(),
            p.busy_fraction.to_string(),
            p.mean_queue.to_string(),
        ),
        None => (String::new(), String::new(), String::new(), String::new()),
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        plan.axis.name(),
        value,
        seed,
        cfg.policy,
        cfg.sampling_mode,
        cfg.n,
        cfg.m,
        cfg.d,
        cfg.lambda,
        cfg.mu,
        cfg.gamma,
        plan.n_arrivals,
        plan.warmup_fraction,
        sim.response.mean,
        sim.response.ci_half_width,
        w_pred,
        pct,
        sim.busy_fraction.mean,
        busy_pred,
        sim.mean_queue_per_entity.mean,
        q_pred,
        status
    )
}

/// Runs a plan and renders the CSV. Points execute on a worker pool; rows
/// are assembled in plan order.
pub fn run_sweep(plan: &ExperimentPlan, workers: Option<usize>) -> Result<String, CliError> {
    plan.validate_all()?;
    let tasks: Vec<(f64, u64)> = plan
        .axis
        .values()
        .into_iter()
        .flat_map(|v| plan.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let rows: Vec<String> = pool.install(|| {
        use rayon::prelude::*;
        tasks
            .par_iter()
            .map(|&(v, s)| sweep_row(plan, v, s))
            .collect()
    });
    let mut csv = String::from("# slqsim sweep v1\n");
    csv.push_str(SWEEP_CSV_HEADER);
    csv.push('\n');
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    Ok(csv)
}

fn cmd_sweep(args: &SweepArgs) -> Result<ExitCode, CliError> {
    let plan = parse_plan_file(&args.plan)?;
    let csv = run_sweep(&plan, args.workers)?;
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(csv.as_bytes())
                .map_err(|e| CliError::Other(e.to_string()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// verify

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    println!("{} {name} ({detail})", if passed { "PASS" } else { "FAIL" });
    Check {
        name,
        passed,
        detail,
    }
}

/// Desk-scale cross-checks between the independent computation routes.
pub fn run_verification(sim_arrivals: u64) -> bool {
    use crate::config::ModelParams;
    let mut checks: Vec<Check> = Vec::new();

    // 1. d = 1 closed form is exact.
    {
        let p = ModelParams {
            lambda: 0.45,
            mu: 1.0,
            gamma: 1.0,
            r: 0.5,
            d: 1,
        };
        let prof = slq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
        let rho = p.selection_load();
        let mut worst = 0.0f64;
        let mut expect = 1.0;
        for &v in prof.pi() {
            worst = worst.max((v - expect).abs());
            expect *= rho;
        }
        let q_err = (prof.mean_queue_size() - rho / (1.0 - rho)).abs();
        checks.push(check(
            "d1-geometric-closed-form",
            worst < 1e-12 && q_err < 1e-9,
            format!("max componentwise error {worst:.2e}, mean-queue error {q_err:.2e}"),
        ));
    }

    // 2. The recursion profile is a zero of the drift.
    {
        let mut worst = 0.0f64;
        for (d, load, gm) in [(2u32, 0.9, 1.0), (3u32, 0.5, 10.0), (5u32, 0.99, 0.5)] {
            let p = ModelParams {
                lambda: load,
                mu: 1.0,
                gamma: gm,
                r: 1.0,
                d,
            };
            let prof = slq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
            let state = MeanFieldState::from_profile(&prof, None);
            worst = worst.max(meanfield::drift_residual(&state, &p, Policy::Slq));
        }
        checks.push(check(
            "equilibrium-zero-drift",
            worst < 1e-10,
            format!("max |drift| {worst:.2e}"),
        ));
    }

    // 3. ODE relaxation from empty lands on the recursion profile.
    {
        let p = ModelParams {
            lambda: 0.045,
            mu: 1.0,
            gamma: 1.0,
            r: 0.05,
            d: 2,
        };
        let relaxed = find_fixed_point_by_relaxation(&p, Policy::Slq, 1e-9, 1e7).unwrap();
        let prof = slq_equilibrium(&p, DEFAULT_TAIL_TOL).unwrap();
        let target = MeanFieldState::from_profile(&prof, Some(relaxed.state.i_max()));
        let diff = relaxed.state.sup_distance(&target);
        checks.push(check(
            "relaxation-matches-recursion",
            diff < 1e-6,
            format!("sup distance {diff:.2e}, residual {:.2e}", relaxed.residual),
        ));
    }

    // 4. Simulator matches the exact chain on small instances.
    for d in [1usize, 2] {
        let spec = CtmcSpec {
            n: 2,
            m: 1,
            d,
            buffer: 40,
            lambda: 0.2,
            mu: 1.0,
            gamma: 1.0,
            sampling_mode: SamplingMode::WithoutReplacement,
        };
        let gen = build_generator(&spec).unwrap();
        let exact = exact_metrics(&gen, &gen.stationary_distribution().unwrap());
        let cfg = SystemConfig {
            n: 2,
            m: 1,
            d: d as u32,
            lambda: 0.2,
            mu: 1.0,
            gamma: 1.0,
            policy: Policy::Slq,
            sampling_mode: SamplingMode::WithoutReplacement,
        }
        .validate()
        .unwrap();
        let sim = run_simulation(&cfg, 2024 + d as u64, sim_arrivals, 0.1);
        let dq = (sim.mean_queue_per_entity.mean - exact.mean_queue_per_flow).abs();
        let dw = (sim.response.mean - exact.response_time).abs();
        let ok = dq < 3.0 * sim.mean_queue_per_entity.std_err && dw < 3.0 * sim.response.std_err;
        checks.push(check(
            if d == 1 {
                "oracle-vs-simulation-d1"
            } else {
                "oracle-vs-simulation-d2"
            },
            ok,
            format!(
                "queue dev {dq:.2e} (3se {:.2e}), response dev {dw:.2e} (3se {:.2e})",
                3.0 * sim.mean_queue_per_entity.std_err,
                3.0 * sim.response.std_err
            ),
        ));
    }

    // 5. Selected-maximum law of the sampler (with replacement).
    {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut lengths = Vec::new();
        lengths.extend(std::iter::repeat_n(0u32, 40));
        lengths.extend(std::iter::repeat_n(1u32, 30));
        lengths.extend(std::iter::repeat_n(2u32, 20));
        lengths.extend(std::iter::repeat_n(3u32, 10));
        let d = 3;
        let tail = [1.0f64, 0.6, 0.3, 0.1, 0.0];
        let probs: Vec<f64> = (0..4)
            .map(|i| (1.0 - tail[i + 1]).powi(d as i32) - (1.0 - tail[i]).powi(d as i32))
            .collect();
        let mut sampler = QueueSampler::new(lengths.len(), d, SamplingMode::WithReplacement);
        let mut s_rng = ChaCha8Rng::seed_from_u64(1001);
        let mut t_rng = ChaCha8Rng::seed_from_u64(1002);
        let trials = 1_000_000u32;
        let mut counts = [0u32; 4];
        for _ in 0..trials {
            match sampler.sample_longest(&lengths, &mut s_rng, &mut t_rng) {
                None => counts[0] += 1,
                Some(idx) => counts[lengths[idx as usize] as usize] += 1,
            }
        }
        let chi2: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * trials as f64;
                (c as f64 - e) * (c as f64 - e) / e
            })
            .sum();
        let crit = ChiSquared::new(3.0).unwrap().inverse_cdf(0.999);
        checks.push(check(
            "sampler-selected-max-law",
            chi2 < crit,
            format!("chi2 {chi2:.2} < {crit:.2}"),
        ));
    }

    let failures: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    for f in &failures {
        eprintln!("verification failed: {} ({})", f.name, f.detail);
    }
    failures.is_empty()
}

fn cmd_verify(args: &VerifyArgs) -> Result<ExitCode, CliError> {
    if run_verification(args.arrivals) {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(CliError::Other("one or more verification checks failed".into()))
    }
}

fn cmd_trajectory(args: &TrajectoryArgs) -> Result<ExitCode, CliError> {
    let cfg = load_config(&args.config, None)?;
    let p = cfg.params();
    let opts = IntegrateOptions {
        dt: args.dt.unwrap_or_else(|| meanfield::default_dt(&p)),
        sample_stride: args.stride,
    };
    let initial = MeanFieldState::empty(args.i_max);
    let traj = integrate(&initial, &p, cfg.policy, args.t_end, opts)
        .map_err(|e| CliError::Other(format!("{e}; try a larger --i-max")))?;
    let mut buf = Vec::new();
    meanfield::write_trajectory_csv(&traj, &mut buf).expect("in-memory write");
    write_file(&args.out, &String::from_utf8(buf).expect("utf8"))?;
    println!(
        "wrote {} states (t up to {:.3}) to {}",
        traj.states.len(),
        traj.last().t,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
