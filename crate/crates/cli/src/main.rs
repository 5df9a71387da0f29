use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rmpc_core::controller::Mode;
use rmpc_core::sim::identify::{disturbance_fragment, estimate_disturbance_set, load_trials};
use rmpc_core::sim::{compute_metrics, emit_outputs, log_from_rows, read_run_csv, run_scenario_with, Metrics};
use rmpc_core::sim::{RunOptions, ScenarioConfig, Termination};
use rmpc_core::Error;

const EXIT_COLLISION: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "rmpc", version, about = "Robust MPC obstacle avoidance scenario harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write run artifacts.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        /// Output directory (default: runs/<scenario name>-<mode>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        noise: Option<Switch>,
        /// Record wall-clock solve times in run.csv (makes it non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Identify the disturbance set from every trial scenario in a directory.
    IdentifyW {
        trial_dir: PathBuf,
        /// Sensor error margin added to each half-width, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [0.0; 5])]
        sensor_margin: Vec<f64>,
        /// Write the configuration fragment here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from a run.csv.
    Metrics {
        run_csv: PathBuf,
        /// Scenario used for obstacle, road and envelope metrics (default: scenario.toml next to the csv).
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Compare the metrics of two runs side by side.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config = err.chain().any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::Config(_) | Error::Io(_))));
            ExitCode::from(if config { EXIT_CONFIG } else { 1 })
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run { scenario, mode, out, seed, noise, timing } => {
            let mut cfg = ScenarioConfig::load(&scenario)?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = noise {
                cfg.noise.enabled = matches!(n, Switch::On);
            }
            let out = out.unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", cfg.name, cfg.mode)));
            run(&cfg, &out, timing)
        }
        Command::IdentifyW { trial_dir, sensor_margin, out } => {
            let trials = load_trials(&trial_dir)?;
            let margin: [f64; 5] = sensor_margin.try_into().map_err(|_| anyhow::anyhow!("sensor margin needs five values"))?;
            let w = estimate_disturbance_set(&trials, margin)?;
            let fragment = disturbance_fragment(&w);
            match out {
                Some(path) => std::fs::write(&path, &fragment).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{fragment}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Metrics { run_csv, scenario } => {
            let metrics = metrics_for(&run_csv, scenario.as_deref())?;
            print!("{metrics}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { run_a, run_b, scenario } => {
            let a = metrics_for(&run_a, scenario.as_deref())?;
            let b = metrics_for(&run_b, scenario.as_deref())?;
            println!("{:<30} {:>22} {:>22}", "metric", label(&run_a), label(&run_b));
            for ((key, va), (_, vb)) in a.entries().into_iter().zip(b.entries()) {
                println!("{key:<30} {va:>22} {vb:>22}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run(cfg: &ScenarioConfig, out: &Path, timing: bool) -> anyhow::Result<ExitCode> {
    let options = RunOptions { timing_in_log: timing, ..RunOptions::default() };
    let log = run_scenario_with(cfg, &options, |_| {})?;
    let metrics = compute_metrics(&log, Some(cfg));
    emit_outputs(&log, &metrics, cfg, out).with_context(|| format!("writing outputs to {}", out.display()))?;
    println!("{} ({}): {} steps, {}", cfg.name, cfg.mode, metrics.steps, metrics.termination);
    println!(
        "min clearance {:.3} m, max |e_y| {:.3} m, overshoot {:.3} m, solve p95 {:.2} ms",
        metrics.min_clearance, metrics.max_abs_ey, metrics.overshoot, metrics.solve_ms_p95
    );
    println!("outputs in {}", out.display());
    Ok(match log.termination {
        Termination::Completed => ExitCode::SUCCESS,
        Termination::Collision { .. } => ExitCode::from(EXIT_COLLISION),
        Termination::ControllerFailure(_) | Termination::PlantFailure(_) => ExitCode::from(EXIT_SOLVER),
    })
}

fn metrics_for(run_csv: &Path, scenario: Option<&Path>) -> anyhow::Result<Metrics> {
    let rows = read_run_csv(run_csv)?;
    if rows.is_empty() {
        bail!("{} has no rows", run_csv.display());
    }
    let sibling = run_csv.with_file_name("scenario.toml");
    let cfg = match scenario {
        Some(p) => Some(ScenarioConfig::load(p)?),
        None if sibling.exists() => Some(ScenarioConfig::load(&sibling)?),
        None => None,
    };
    let log = log_from_rows(rows, cfg.as_ref());
    Ok(compute_metrics(&log, cfg.as_ref()))
}

fn label(path: &Path) -> String {
    path.parent().and_then(|p| p.file_name()).map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}
