use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use matchradius::multitask::StrategyKind;
use matchradius_cli::config::City;
use matchradius_cli::{commands, exit_code, report, ScenarioConfig};

#[derive(Parser)]
#[command(name = "matchradius", version, about = "Broadcast matching simulator with dynamic matching radii")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Scenario {
    /// Scenario file (.toml or .json); defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    city: Option<City>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    start_hour: Option<f64>,
    #[arg(long)]
    hours: Option<f64>,
    /// Output directory; relative paths resolve under $MATCHRADIUS_OUT.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl Scenario {
    fn load(&self) -> anyhow::Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => ScenarioConfig::default(),
        };
        if let Some(city) = self.city {
            cfg.city = city;
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        cfg.start_hour = self.start_hour.unwrap_or(cfg.start_hour);
        cfg.hours = self.hours.unwrap_or(cfg.hours);
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self, cfg: &ScenarioConfig, default: &str) -> PathBuf {
        cfg.resolved_output(self.out.as_deref(), default)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fixed-radius sweep over the candidate radii (or --radii).
    Simulate {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<f64>>,
    },
    /// Exploration episodes with random per-grid radii.
    Collect {
        #[command(flatten)]
        scenario: Scenario,
    },
    /// Fit the predictor on collected episodes.
    Train {
        #[command(flatten)]
        scenario: Scenario,
        /// Directory of episode logs written by `collect`.
        #[arg(long)]
        episodes: PathBuf,
        #[arg(long)]
        strategy: Option<StrategyKind>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the learned radius controller.
    Dbras {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Combine run directories into one table.
    Report {
        /// Run directories containing summary.csv and manifest.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Model name to compute relative deltas against.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, short, default_value = "report")]
        out: PathBuf,
    },
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { scenario, radii } => {
            let cfg = scenario.load()?;
            let out = scenario.out(&cfg, "runs/simulate");
            for row in commands::simulate(&cfg, radii.as_deref(), &out)? {
                println!("{:<8} OFR {:.4}  DUR {:.4}  PR {:.3}  APD {:.3}", row.model, row.ofr, row.dur, row.pr, row.apd);
            }
            println!("wrote {}", out.display());
        }
        Command::Collect { scenario } => {
            let cfg = scenario.load()?;
            let out = scenario.out(&cfg, "runs/collect");
            let paths = commands::collect(&cfg, &out)?;
            println!("wrote {} episodes to {}", paths.len(), out.join("episodes").display());
        }
        Command::Train {
            scenario,
            episodes,
            strategy,
            epochs,
        } => {
            let mut cfg = scenario.load()?;
            if let Some(s) = strategy {
                cfg.training.strategy = s;
            }
            cfg.training.epochs = epochs.unwrap_or(cfg.training.epochs);
            cfg.validate()?;
            let out = scenario.out(&cfg, "runs/train");
            let report = commands::train(&cfg, &episodes, &out)?;
            let losses: Vec<String> = report.final_test.iter().map(|l| format!("{l:.4}")).collect();
            println!("{} steps, final test loss per task [{}]", report.steps, losses.join(", "));
            println!("wrote {}", out.join("checkpoint.json").display());
        }
        Command::Dbras { scenario, checkpoint } => {
            let cfg = scenario.load()?;
            let out = scenario.out(&cfg, "runs/dbras");
            let row = commands::dbras(&cfg, &checkpoint, &out)?;
            println!("{}: OFR {:.4}  DUR {:.4}  PR {:.3}  APD {:.3}", row.model, row.ofr, row.dur, row.pr, row.apd);
            println!("wrote {}", out.display());
        }
        Command::Report { runs, baseline, out } => {
            let runs: Vec<&Path> = runs.iter().map(PathBuf::as_path).collect();
            let out = resolve_root(out);
            report::report(&runs, baseline.as_deref(), &out).context("building report")?;
            println!("wrote {}", out.join("report.md").display());
        }
    }
    Ok(())
}

fn resolve_root(dir: PathBuf) -> PathBuf {
    match std::env::var_os(matchradius_cli::config::OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
