//! The `dppdyn` command line: `check`, `sample`, `simulate`, `verify` and
//! `bounds`, all driven by an [`ExperimentConfig`].
//!
//! Exit codes are 0 on success, 1 when a check fails or a computation
//! errors, and 2 for usage and configuration errors. `DPPDYN_OUTPUT_DIR`
//! overrides the configured output directory and `DPPDYN_THREADS` the
//! worker thread count.

mod config;
mod verify;

pub use config::{
    ExperimentConfig, KernelSection, OutputSection, RatesSection, RunSection, Tolerances,
    VerifySection, VerifySuite,
};
pub use verify::{run_suites, CheckResult, Status};

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::dpp::DppMeasure;
use crate::error::{Error, Result};
use crate::rates::{self, Dynamics, LiggettMode, Rates};
use crate::simulate::{self, InitialState};

pub const OUTPUT_DIR_ENV: &str = "DPPDYN_OUTPUT_DIR";
pub const THREADS_ENV: &str = "DPPDYN_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "dppdyn",
    version,
    about = "Discrete determinantal point processes and their Glauber and Kawasaki dynamics"
)]
pub struct Cli {
    /// Experiment configuration (TOML). Without it the two-site kernel
    /// [[2, 0.5], [0.5, 2]] is used with default settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate the configuration and summarize the kernel.
    Check,
    /// Draw exact samples from the DPP, one bitstring per line.
    Sample {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate the dynamics and estimate correlation functions.
    Simulate {
        #[arg(long, value_enum)]
        mode: Option<Dynamics>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        burn_in: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Initial state: empty, full, dpp-sample, or a bitstring.
        #[arg(long)]
        initial: Option<String>,
        /// Site tuples as comma lists, e.g. `0,1`; repeat the flag or
        /// separate tuples with `;`.
        #[arg(long, num_args = 1..)]
        observables: Vec<String>,
        /// Write every event of the first replica as CSV.
        #[arg(long)]
        event_log: Option<PathBuf>,
    },
    /// Run the exact oracle suites and print a JSON report.
    Verify {
        #[arg(long = "suite", value_enum)]
        suites: Vec<VerifySuite>,
    },
    /// Print the Liggett constants as JSON.
    Bounds {
        #[arg(long, value_enum)]
        mode: Option<Dynamics>,
        /// Skip enumeration and report analytic bounds only.
        #[arg(long)]
        bound_only: bool,
    },
}

enum Failure {
    Usage(Error),
    Runtime(Error),
    CheckFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Runs the command line with the given arguments and returns the exit
/// code.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    configure_threads();
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(Failure::CheckFailed) => 1,
        Err(Failure::Usage(e)) => {
            let _ = writeln!(
                stderr,
                "{}",
                json!({"error": e.to_string(), "kind": "usage"})
            );
            2
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(
                stderr,
                "{}",
                json!({"error": e.to_string(), "kind": "runtime"})
            );
            1
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn load_config(path: Option<&Path>) -> std::result::Result<ExperimentConfig, Failure> {
    match path {
        Some(p) => ExperimentConfig::parse_file(p).map_err(Failure::Usage),
        None => Ok(ExperimentConfig::a2()),
    }
}

fn output_dir(cfg: &ExperimentConfig) -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
}

fn resolve(cfg: &ExperimentConfig, path: &Path) -> PathBuf {
    match output_dir(cfg) {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn emit(cfg: &ExperimentConfig, stdout: &mut dyn Write, file_name: &str, text: &str) -> Result<()> {
    stdout.write_all(text.as_bytes())?;
    if let Some(dir) = output_dir(cfg) {
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(file_name), text)?;
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn parse_observables(items: &[String]) -> std::result::Result<Vec<Vec<usize>>, Failure> {
    let mut out = Vec::new();
    for item in items {
        for tuple in item.split(';').filter(|t| !t.trim().is_empty()) {
            let sites = tuple
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Failure::Usage(Error::Parse(format!("observable {tuple:?}: {e}"))))?;
            out.push(sites);
        }
    }
    Ok(out)
}

fn parse_initial(s: &str) -> InitialState {
    match s {
        "empty" => InitialState::Empty,
        "full" => InitialState::Full,
        "dpp-sample" => InitialState::DppSample,
        bits => InitialState::Explicit(bits.to_string()),
    }
}

fn execute(cli: &Cli, stdout: &mut dyn Write) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Check => {
            let k = cfg.build_kernel().map_err(Failure::Usage)?;
            let a = k.check_assumption_a();
            let report = json!({
                "n_sites": k.n_sites(),
                "real": k.is_real(),
                "lambda_margin": k.lambda_margin(),
                "q": k.q_value(),
                "q_exact": k.q_exact(),
                "op_norm": k.op_norm(),
                "min_eigenvalue": k.min_eigenvalue(),
                "assumption_a": a.holds,
                "expected_size": DppMeasure::new(&k).expected_size(),
            });
            emit(&cfg, stdout, "check.json", &to_json(&report)?)?;
            if !a.holds {
                return Err(Failure::CheckFailed);
            }
        }
        Command::Sample { count, seed } => {
            let k = cfg.build_kernel().map_err(Failure::Usage)?;
            let measure = DppMeasure::new(&k);
            let master = seed.unwrap_or(cfg.run.seed);
            let mut text = String::new();
            for i in 0..*count {
                text.push_str(
                    &measure
                        .sample(simulate::replica_seed(master, i))
                        .to_bitstring(),
                );
                text.push('\n');
            }
            emit(&cfg, stdout, "samples.txt", &text)?;
        }
        Command::Simulate {
            mode,
            horizon,
            burn_in,
            replicas,
            seed,
            initial,
            observables,
            event_log,
        } => {
            let run = &mut cfg.run;
            if let Some(m) = mode {
                run.mode = *m;
            }
            if let Some(h) = horizon {
                run.horizon = *h;
            }
            if let Some(b) = burn_in {
                run.burn_in = *b;
            }
            if let Some(r) = replicas {
                run.replicas = *r;
            }
            if let Some(s) = seed {
                run.seed = *s;
            }
            if let Some(i) = initial {
                run.initial = parse_initial(i);
            }
            if !observables.is_empty() {
                run.observables = parse_observables(observables)?;
            }
            if let Some(p) = event_log {
                cfg.output.event_log = Some(p.to_string_lossy().into_owned());
            }
            cfg.validate().map_err(Failure::Usage)?;
            simulate_command(&cfg, stdout)?;
        }
        Command::Verify { suites } => {
            if !suites.is_empty() {
                cfg.verify.suites = suites.clone();
            }
            let k = cfg.build_kernel().map_err(Failure::Usage)?;
            let results = run_suites(&cfg, &k, &cfg.verify.suites)?;
            emit(&cfg, stdout, "verify.json", &to_json(&results)?)?;
            if results.iter().any(|r| r.status == Status::Fail) {
                return Err(Failure::CheckFailed);
            }
        }
        Command::Bounds { mode, bound_only } => {
            let k = cfg.build_kernel().map_err(Failure::Usage)?;
            let dynamics = mode.unwrap_or(cfg.run.mode);
            let spec = cfg.rate_spec(k.space()).map_err(Failure::Usage)?;
            let lc = rates::liggett_constants(
                &k,
                &Rates::new(dynamics, &spec),
                bound_only.then_some(LiggettMode::Bound),
            )?;
            let report = json!({
                "dynamics": dynamics,
                "c_sup": lc.c_sup,
                "epsilon": lc.epsilon,
                "epsilon_lower_bound": lc.epsilon_lower_bound,
                "epsilon_nondegenerate": lc.epsilon_nondegenerate,
                "M_exact": lc.m_exact,
                "M_interaction": lc.m_interaction,
                "M1_exact": lc.m1_exact,
                "M1_bound": lc.m1_bound,
                "a0": lc.a0,
                "M_bound": lc.m_bound,
                "ergodic": lc.ergodic,
                "exhaustive": lc.exhaustive,
            });
            emit(&cfg, stdout, "bounds.json", &to_json(&report)?)?;
        }
    }
    Ok(())
}

fn simulate_command(
    cfg: &ExperimentConfig,
    stdout: &mut dyn Write,
) -> std::result::Result<(), Failure> {
    let k = cfg.build_kernel().map_err(Failure::Usage)?;
    let spec = cfg.rate_spec(k.space()).map_err(Failure::Usage)?;
    let rates = Rates::new(cfg.run.mode, &spec);
    let trajectories = simulate::run_replicas(&k, &rates, &cfg.run.sim_config(), cfg.run.replicas)?;
    let tuples = cfg.observables(k.n_sites());
    let estimates = simulate::estimate_correlations(&trajectories, &tuples, cfg.run.batches)?;
    let measure = DppMeasure::new(&k);
    let mut records = Vec::new();
    for e in estimates {
        let mut sorted = e.sites.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let target = measure.correlation(&sorted)?;
        records.push(json!({
            "sites": e.sites,
            "estimate": e.estimate,
            "stderr": e.stderr,
            "target": target,
        }));
    }
    let warnings: Vec<&String> = trajectories
        .first()
        .map(|t| t.warnings.iter().collect())
        .unwrap_or_default();
    let report = json!({
        "mode": cfg.run.mode,
        "horizon": cfg.run.horizon,
        "burn_in": cfg.run.burn_in,
        "replicas": cfg.run.replicas,
        "seed": cfg.run.seed,
        "events": trajectories.iter().map(|t| t.events.len()).sum::<usize>(),
        "engine_drift": trajectories.iter().map(|t| t.engine_drift).fold(0.0, f64::max),
        "warnings": warnings,
        "observables": records,
    });
    if let Some(log) = &cfg.output.event_log {
        let path = resolve(cfg, Path::new(log));
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(Error::from)?;
        }
        let file = std::io::BufWriter::new(std::fs::File::create(&path).map_err(Error::from)?);
        trajectories[0].write_event_log(file)?;
    }
    emit(cfg, stdout, "simulate.json", &to_json(&report)?)?;
    Ok(())
}
