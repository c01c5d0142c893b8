use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use orbinspect::config::ScenarioConfig;
use orbinspect::observer::RegressorKind;
use orbinspect::output::{write_run, write_sweep};
use orbinspect::plot::plot_dir;
use orbinspect::sim::{run_scenario, sweep_gamma_c};

/// Closed-loop camera-based inspection simulator.
#[derive(Debug, Parser)]
#[command(name = "orbinspect", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegressorArg {
    Windowed,
    Filtered,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write CSVs, a manifest and SVG plots.
    Run {
        /// Scenario TOML; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, value_enum)]
        barrier: Option<Switch>,
        #[arg(long, value_enum)]
        regressor: Option<RegressorArg>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Skip SVG rendering.
        #[arg(long)]
        no_plots: bool,
    },
    /// Re-run the scenario for several parameter values and summarize conditioning.
    Sweep {
        /// Only `gamma_c` is supported.
        #[arg(long, default_value = "gamma_c")]
        param: String,
        #[arg(long, value_delimiter = ',', default_value = "0,5,10,15,20")]
        values: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Render SVG plots from a directory written by `run`.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        /// Output directory; defaults to the metrics directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default scenario as TOML.
    Defaults,
}

fn load_config(path: Option<&Path>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::from_file(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ScenarioConfig::default()),
    }
}

fn render(metrics: &Path, out: &Path) -> Result<()> {
    let report = plot_dir(metrics, out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("plots: {} written to {}", report.written.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, duration, barrier, regressor, out, no_plots } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(d) = duration {
                cfg.duration = d;
            }
            if let Some(b) = barrier {
                cfg.barrier = b == Switch::On;
            }
            if let Some(r) = regressor {
                cfg.regressor = match r {
                    RegressorArg::Windowed => RegressorKind::Windowed,
                    RegressorArg::Filtered => RegressorKind::Filtered,
                };
            }
            cfg.validate()?;
            let started = std::time::Instant::now();
            let result = run_scenario(&cfg)?;
            let m = &result.metrics;
            let manifest = write_run(&result, &out)?;
            println!(
                "t_end={} steps={} min_range={:.3} max_range={:.3} inspected={}/{} median_cond={} wall={:.2?}",
                m.t_end,
                m.steps,
                m.min_range,
                m.max_range,
                m.inspected_final,
                cfg.n_features,
                m.median_cond().map_or_else(|| "n/a".to_string(), |c| format!("{c:.3}")),
                started.elapsed(),
            );
            println!("wrote {} files to {} (config {})", manifest.files.len(), out.display(), manifest.config_hash);
            if !no_plots {
                render(&out, &out)?;
            }
            if let Some(fault) = &m.fault {
                eprintln!("fault: {fault}");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Sweep { param, values, config, duration, out } => {
            if param != "gamma_c" {
                bail!("unsupported sweep parameter {param:?}; only gamma_c is available");
            }
            let mut cfg = load_config(config.as_deref())?;
            if let Some(d) = duration {
                cfg.duration = d;
            }
            let points = sweep_gamma_c(&cfg, &values)?;
            println!("gamma_c,median_cond,samples,fault");
            for p in &points {
                println!(
                    "{},{},{},{}",
                    p.gamma_c,
                    p.median_cond.map_or_else(String::new, |c| c.to_string()),
                    p.samples,
                    p.fault.as_deref().unwrap_or("")
                );
            }
            write_sweep(&cfg, &points, &out)?;
            println!("wrote {}", out.display());
            if points.iter().any(|p| p.fault.is_some()) {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Plot { metrics, out } => {
            let out = out.unwrap_or_else(|| metrics.clone());
            render(&metrics, &out)?;
        }
        Command::Defaults => print!("{}", ScenarioConfig::default().to_toml_string()?),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
