use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dgfit::config::{RunConfig, ScenarioId};
use dgfit::run::run_scenario;
use dgfit::Error;

#[derive(Parser)]
#[command(name = "dgfit", version, about = "Adaptive exponentially fitted IPDG runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a TOML config file
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        levels: Option<u8>,
        #[arg(long)]
        dt: Option<f64>,
        /// final time
        #[arg(long)]
        until: Option<f64>,
        /// replace the scenario id, keeping the other keys
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Print the preset config of a scenario
    Preset { scenario: String },
}

fn load(
    config: &PathBuf,
    output_dir: Option<PathBuf>,
    levels: Option<u8>,
    dt: Option<f64>,
    until: Option<f64>,
    scenario: Option<String>,
) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = scenario {
        let id = ScenarioId::parse(&s)?;
        if cfg.scenario != id {
            let fresh = RunConfig::preset(id);
            cfg.scenario = id;
            cfg.custom = fresh.custom;
            cfg.manufactured = fresh.manufactured;
        }
    }
    if let Some(d) = output_dir {
        cfg.output.dir = d;
    }
    if let Some(l) = levels {
        cfg.mesh.levels = l;
    }
    if let Some(d) = dt {
        cfg.time.dt = d;
    }
    if let Some(t) = until {
        cfg.time.end = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Preset { scenario } => match ScenarioId::parse(&scenario) {
            Ok(id) => {
                print!("{}", RunConfig::preset(id).to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run {
            config,
            output_dir,
            levels,
            dt,
            until,
            scenario,
        } => {
            let cfg = match load(&config, output_dir, levels, dt, until, scenario) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_scenario(&cfg) {
                Ok(()) => {
                    eprintln!("done, output in {}", cfg.output.dir.display());
                    ExitCode::SUCCESS
                }
                Err(e @ Error::Config(_)) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("solver failure: {e}");
                    ExitCode::from(3)
                }
            }
        }
    }
}
