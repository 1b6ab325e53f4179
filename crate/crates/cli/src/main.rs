mod args;
mod commands;
mod output;
mod resolve;

use std::process::ExitCode;

use clap::Parser;
use dynfed_core::{Method, ScenarioConfig};

use args::{Cli, Command, ConfigArgs};
use resolve::ConfigError;

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn jobs(args: &ConfigArgs) -> Result<usize, ConfigError> {
    match args.jobs {
        Some(0) => Err(ConfigError::new("jobs", "must be at least 1")),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn dynbc_only(cfg: &mut ScenarioConfig) {
    cfg.methods = vec![Method::Dynbc];
}

fn execute(cli: Cli) -> Result<commands::Written, Failure> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.resolve(None, |_| {})?;
            commands::check_out_dir(&cfg)?;
            Ok(commands::run(&cfg, jobs(&args)?)?)
        }
        Command::GateTrace(args) => {
            let cfg = args.resolve(None, |c| {
                dynbc_only(c);
                c.epochs = 2;
                c.eval_epochs = 1;
                if !c.stage_boundaries.is_empty() {
                    c.stage_boundaries = vec![2];
                }
            })?;
            commands::check_out_dir(&cfg)?;
            Ok(commands::gate_trace(&cfg, jobs(&args)?)?)
        }
        Command::AblateThreshold { factors, config } => {
            commands::validate_factors(&factors)?;
            let cfg = config.resolve(Some("cf-analog"), dynbc_only)?;
            commands::check_out_dir(&cfg)?;
            Ok(commands::ablate_threshold(&cfg, &factors, jobs(&config)?)?)
        }
        Command::AblateRefaug(args) => {
            if args.preset.is_some() || args.scenario.is_some() {
                return Err(ConfigError::new(
                    "preset",
                    "ablate-refaug always compares the cd-bcss-analog and cf-analog presets",
                )
                .into());
            }
            // the client-drift cell is single-stage, so boundaries only reach the cf cell
            let cd_args = ConfigArgs {
                stage_boundaries: None,
                ..args.clone()
            };
            let cells = vec![
                cd_args.resolve(Some("cd-bcss-analog"), dynbc_only)?,
                args.resolve(Some("cf-analog"), dynbc_only)?,
            ];
            commands::check_out_dir(&cells[0])?;
            Ok(commands::ablate_refaug(&cells, jobs(&args)?)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(written) => {
            print!("{}", written.table);
            println!("wrote {}", written.dir.display());
            ExitCode::SUCCESS
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
