use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand, ValueEnum};
use gfcsim_core::analysis::{self, ExperimentReport, SmoothingParams};
use gfcsim_core::bundled;
use gfcsim_core::scenario::{Scenario, ScenarioError};
use gfcsim_core::sim::{self, RunOutput};
use gfcsim_core::EventLog;
use thiserror::Error;

/// Discrete-event simulator of DPI-triggered active probing and bridge blocking.
#[derive(Parser)]
#[command(name = "gfcsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or bundled scenario and write its event log.
    Run {
        /// Path to a scenario file, or the name of a bundled scenario.
        scenario: String,
        /// Overrides the scenario's seed; with --sweep, the first seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run this many consecutive seeds, each into `seed-<n>/`.
        #[arg(long, value_name = "COUNT")]
        sweep: Option<u64>,
        /// Worker threads for a sweep.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the scenario's duration in seconds.
        #[arg(long)]
        duration_s: Option<u64>,
        #[arg(long, env = "GFCSIM_OUT_DIR", default_value = "gfcsim-out")]
        out: PathBuf,
    },
    /// Analyze an event log written by `run`.
    Report {
        log: PathBuf,
        #[arg(value_enum)]
        name: ReportName,
        /// Smoothing factor for `smooth`.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Bucket width in seconds for `usage`.
        #[arg(long, default_value_t = 3600)]
        bucket: u64,
        #[arg(long, env = "GFCSIM_OUT_DIR", default_value = "gfcsim-out")]
        out: PathBuf,
    },
    /// Check a scenario file without running it.
    Validate { scenario: String },
    /// List the bundled scenarios.
    ListScenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportName {
    Timing,
    Smooth,
    Reachability,
    ScannerStats,
    #[value(alias = "usage-curve")]
    Usage,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {err}")]
    Scenario { path: String, err: ScenarioError },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Scenario { err, .. } => match err {
                ScenarioError::Io { .. } => 1,
                _ => 2,
            },
        }
    }
}

/// Writes to stdout, ignoring a closed pipe (`gfcsim list-scenarios | head`).
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// A path that exists is read from disk; anything else is looked up among
/// the bundled scenarios.
fn load_scenario(arg: &str) -> Result<Scenario, CliError> {
    let wrap = |err| CliError::Scenario {
        path: arg.to_string(),
        err,
    };
    if Path::new(arg).exists() {
        Scenario::load(Path::new(arg)).map_err(wrap)
    } else if bundled::source(arg).is_some() {
        bundled::load(arg).map_err(wrap)
    } else {
        Err(CliError::Usage(format!(
            "{arg}: no such file or bundled scenario (see `gfcsim list-scenarios`)"
        )))
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn write_run(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write(&dir.join("events.log"), &out.log.to_text())?;
    write(&dir.join("header.toml"), &out.header)?;
    write(&dir.join("summary.txt"), &out.summary_text())
}

fn cmd_run(
    scenario: &str,
    seed: Option<u64>,
    sweep: Option<u64>,
    jobs: usize,
    duration_s: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let mut s = load_scenario(scenario)?;
    if let Some(d) = duration_s {
        s.meta.duration_s = d;
    }
    let Some(count) = sweep else {
        let result = sim::run(&s, seed);
        write_run(out, &result)?;
        emit(&result.summary_text());
        return Ok(());
    };
    if count == 0 || jobs == 0 {
        return Err(CliError::Usage("--sweep and --jobs must be positive".into()));
    }
    let first = seed.unwrap_or(s.meta.seed);
    let seeds: Vec<u64> = (0..count).map(|i| first + i).collect();
    let next = AtomicUsize::new(0);
    let failure = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let result = sim::run(&s, Some(seed));
                if let Err(e) = write_run(&out.join(format!("seed-{seed}")), &result) {
                    failure.lock().unwrap().get_or_insert(e);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    emit(&format!("{count} runs written under {}\n", out.display()));
    Ok(())
}

fn cmd_report(log: &Path, name: ReportName, alpha: f64, bucket: u64, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(log).map_err(|e| io_err(log, e))?;
    let log_data =
        EventLog::parse(&text).map_err(|e| CliError::Runtime(format!("{}:{}: {}", log.display(), e.line, e.reason)))?;
    let report: ExperimentReport = match name {
        ReportName::Timing => analysis::timing_report(&log_data),
        ReportName::Smooth => {
            let params = SmoothingParams::new(alpha).map_err(|e| CliError::Usage(e.to_string()))?;
            analysis::smooth_report(&log_data, params)
        }
        ReportName::Reachability => analysis::reachability_report(&log_data),
        ReportName::ScannerStats => analysis::scanner_distribution_stats(&log_data),
        ReportName::Usage => analysis::usage_report(&log_data, bucket).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for (file, csv) in &report.tables {
        write(&out.join(file), csv)?;
    }
    let summary = report.summary_text();
    write(&out.join(format!("{}.txt", report.name)), &summary)?;
    emit(&summary);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            sweep,
            jobs,
            duration_s,
            out,
        } => cmd_run(&scenario, seed, sweep, jobs, duration_s, &out),
        Command::Report {
            log,
            name,
            alpha,
            bucket,
            out,
        } => cmd_report(&log, name, alpha, bucket, &out),
        Command::Validate { scenario } => {
            let s = load_scenario(&scenario)?;
            emit(&format!(
                "ok: {} ({} hosts, {} links, {} clients)\n",
                s.meta.name,
                s.hosts.len(),
                s.links.len(),
                s.clients.len()
            ));
            Ok(())
        }
        Command::ListScenarios => {
            for name in bundled::names() {
                let s = bundled::load(name).map_err(|e| CliError::Runtime(format!("{name}: {e}")))?;
                emit(&format!("{name}\t{}\n", s.meta.description));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gfcsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
