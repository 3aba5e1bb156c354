//! Scenario runner and trace reporting tool.
//!
//! `hermes run <config>` executes a scenario and writes the trace and
//! reports; `hermes validate <config>` checks a config without running it;
//! `hermes report <trace>` recomputes the throughput and timing reports
//! from a previously written trace.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use hermes_core::monitor::{self, Window};
use hermes_core::nn::ModelSpec;
use hermes_core::scenario::ScenarioConfig;

#[derive(Parser)]
#[command(name = "hermes", about = "Deterministic mesh simulator and report tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario config and emit trace + reports.
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the run duration in virtual milliseconds.
        #[arg(long)]
        duration: Option<u64>,
        /// Directory for trace.log, report.txt and records.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress the report on stdout.
        #[arg(long)]
        quiet: bool,
    },
    /// Check a scenario config and list problems with field paths.
    Validate { config: PathBuf },
    /// Recompute reports from a trace file.
    Report {
        trace: PathBuf,
        /// Accounting window as start..end in virtual ms.
        #[arg(long)]
        window: Option<String>,
        /// Root node label used in the trace.
        #[arg(long, default_value = "root")]
        root: String,
        /// Root AP IP (for forwarded-traffic classification).
        #[arg(long, default_value = "10.0.1.1")]
        root_ip: String,
        /// Optional model file for inference verdicts.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>, duration: Option<u64>) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut config = ScenarioConfig::from_toml(&text)?;
    // Model paths resolve relative to the config file.
    if config.nn.model_text.is_none() {
        if let Some(model_path) = config.nn.model_path.clone() {
            let resolved = path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&model_path);
            let model_text = fs::read_to_string(&resolved)
                .with_context(|| format!("reading model {}", resolved.display()))?;
            config.nn.model_text = Some(model_text);
        }
    }
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(duration) = duration {
        config.duration_ms = duration;
    }
    Ok(config)
}

fn parse_window(spec: &str) -> Result<Window> {
    let Some((a, b)) = spec.split_once("..") else {
        bail!("window must look like 0..60000");
    };
    Ok(Window {
        start_ms: a.parse().context("window start")?,
        end_ms: b.parse().context("window end")?,
    })
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            duration,
            out,
            quiet,
        } => {
            let config = load_config(&config, seed, duration)?;
            let errors = config.validate();
            if !errors.is_empty() {
                for e in &errors {
                    eprintln!("invalid: {e}");
                }
                return Ok(ExitCode::from(2));
            }
            let report = hermes_core::run_scenario(&config)?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("trace.log"), &report.trace_text)?;
                fs::write(dir.join("report.txt"), report.report_text())?;
                fs::write(dir.join("records.jsonl"), report.records_jsonl())?;
            }
            if !quiet {
                print!("{}", report.report_text());
            }
            if report.oracle_ok() {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("inference oracle mismatch");
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Validate { config } => {
            let config = load_config(&config, None, None)?;
            let errors = config.validate();
            if errors.is_empty() {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for e in &errors {
                    println!("{e}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Report {
            trace,
            window,
            root,
            root_ip,
            model,
        } => {
            let text = fs::read_to_string(&trace)
                .with_context(|| format!("reading trace {}", trace.display()))?;
            let window = match window {
                Some(w) => parse_window(&w)?,
                None => {
                    let last_t = text
                        .lines()
                        .rev()
                        .find_map(hermes_core::trace::parse_line)
                        .map(|r| r.t + 1)
                        .unwrap_or(0);
                    Window {
                        start_ms: 0,
                        end_ms: last_t,
                    }
                }
            };
            let model = match model {
                Some(p) => {
                    let t = fs::read_to_string(&p)
                        .with_context(|| format!("reading model {}", p.display()))?;
                    Some(ModelSpec::parse(&t).map_err(|e| anyhow::anyhow!(e.to_string()))?)
                }
                None => None,
            };
            let root_ip = root_ip.parse().context("root ip")?;
            let (throughput, timing, inference, malformed) =
                monitor::reports_from_trace_text(&text, &root, root_ip, window, model.as_ref());
            let bundle = monitor::ReportBundle {
                throughput,
                timing,
                inference,
                topology_log: Vec::new(),
                drops: Default::default(),
            };
            print!("{}", bundle.render_text());
            if malformed > 0 {
                eprintln!("note: {malformed} malformed trace lines");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
