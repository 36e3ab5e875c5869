use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;
use vigil::config::{RunMode, SystemConfig};
use vigil::persist;
use vigil::system::{RunError, RunOptions, System};

/// Simulated building monitoring: virtual cameras and sensors, an event
/// pipeline with video analytics and correlation rules, and an operator API.
#[derive(Parser)]
#[command(name = "vigil", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario end to end and persist its logs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Scenario name, file stem or path.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Lockstep, as fast as possible, reproducible.
        #[arg(long)]
        fast: bool,
        /// Run directory; defaults to `<log_dir>/<scenario>-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the report of a persisted run, checked against its logs.
    Report { logdir: PathBuf },
    /// Re-run the rule engine over a persisted run and compare alarm logs.
    Replay { logdir: PathBuf },
    /// List scenarios available to a config.
    ListScenarios {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            config,
            scenario,
            seed,
            fast,
            out,
        } => run(config, scenario, seed, fast, out),
        Command::Report { logdir } => report(logdir),
        Command::Replay { logdir } => replay(logdir),
        Command::ListScenarios { config } => list(config),
    };
    ExitCode::from(code)
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

fn run(
    config: PathBuf,
    scenario: Option<String>,
    seed: Option<u64>,
    fast: bool,
    out: Option<PathBuf>,
) -> u8 {
    let cfg = match SystemConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let opts = RunOptions {
        scenario,
        seed,
        mode: fast.then_some(RunMode::Fast),
        run_dir: out,
        no_persist: false,
    };
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let result: Result<_, RunError> = runtime.block_on(async {
        let system = System::start(cfg, opts).await?;
        let dir = system.run_dir().cloned();
        let endpoints = system.endpoints().clone();
        eprintln!(
            "console API on {}, control on {}",
            endpoints.console_url(),
            endpoints.control_url()
        );
        let stop = async {
            let _ = tokio::signal::ctrl_c().await;
            eprintln!("interrupted, flushing logs");
        };
        let report = system.run_until(stop).await?;
        Ok((report, dir))
    });
    match result {
        Ok((report, dir)) => {
            println!("{}", json(&report));
            if let Some(d) = dir {
                eprintln!("logs in {}", d.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code() as u8
        }
    }
}

fn report(dir: PathBuf) -> u8 {
    match persist::report(&dir) {
        Ok((report, mismatches)) => {
            println!("{}", json(&report));
            if mismatches.is_empty() {
                0
            } else {
                eprintln!("report disagrees with logs on: {}", mismatches.join(", "));
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn replay(dir: PathBuf) -> u8 {
    match persist::replay(&dir) {
        Ok(outcome) => {
            println!("{}", json(&persist::normalize_ids(&outcome.replayed)));
            eprintln!(
                "replayed {} records: {} alarms, original log has {}",
                outcome.records,
                outcome.replayed.len(),
                outcome.original.len()
            );
            if outcome.matches() {
                eprintln!("alarm logs match");
                0
            } else {
                eprintln!("alarm logs differ");
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn list(config: PathBuf) -> u8 {
    let cfg = match SystemConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match cfg.list_scenarios() {
        Ok(list) => {
            for (path, s) in list {
                let stem = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default();
                println!("{stem:<16} {:>6.1}s  {}", s.duration, s.description);
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
