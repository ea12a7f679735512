use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dyndiff::harness::{grain_sweep, load_report, run_scenario, HarnessError, Layer, RunOptions, Scenario};
use dyndiff::units::{validate, ConfigFile, ValidatedConfig};

#[derive(Parser)]
#[command(name = "dyndiff", version, about = "Run diffusion-swarm scenarios against a Schrödinger reference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write frames plus a report into `--out`.
    Run(RunArgs),
    /// Rerun a scenario at several grains.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated cell sizes, e.g. 0.2,0.1,0.05.
        #[arg(long, value_delimiter = ',', required = true)]
        grains: Vec<f64>,
    },
    /// Print the summary of a finished run as JSON.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    scenario: String,
    #[arg(long, value_delimiter = ',', default_value = "swarm,reference")]
    layers: Vec<Layer>,
    /// Defaults to the `seed` key of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Use this `d` instead of calibrating it.
    #[arg(long)]
    fixed_d: Option<f64>,
    /// Use this kick gain instead of calibrating it.
    #[arg(long)]
    kick_gain: Option<f64>,
    /// Samples in the calibration runs.
    #[arg(long)]
    calibration_samples: Option<u64>,
    /// Skip per-frame wave-function reconstruction.
    #[arg(long)]
    no_reconstruct: bool,
}

enum Failure {
    Harness(HarnessError),
    Input(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

fn load(args: &RunArgs) -> Result<(ValidatedConfig, Scenario, RunOptions), Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", args.config.display())))?;
    let file = ConfigFile::parse(&text).map_err(HarnessError::from)?;
    let cfg = validate(file.physical, file.grid).map_err(HarnessError::from)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let scenario = Scenario::from_config(&args.scenario, &cfg, &file.scenario, base)?;
    let opts = RunOptions {
        layers: args.layers.clone(),
        seed: args.seed.unwrap_or(file.seed),
        workers: args.workers,
        fixed_d: args.fixed_d,
        kick_gain: args.kick_gain,
        calibration_samples: args.calibration_samples,
        reconstruct: !args.no_reconstruct,
        out: Some(args.out.clone()),
        ..RunOptions::default()
    };
    Ok((cfg, scenario, opts))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(HarnessError::from)?;
    println!("{text}");
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, scenario, opts) = load(&args)?;
            log::info!("running {} with layers {:?}", scenario.name, opts.layers);
            let report = run_scenario(&scenario, &cfg, &opts)?;
            print_json(&report.summary())
        }
        Command::Sweep { run, grains } => {
            let (cfg, scenario, opts) = load(&run)?;
            log::info!("sweeping {} over {grains:?}", scenario.name);
            let sweep = grain_sweep(&scenario, &grains, &cfg, &opts)?;
            print_json(&sweep)
        }
        Command::Report { run } => {
            let report = load_report(&run)?;
            let mut value = serde_json::to_value(report.summary()).map_err(HarnessError::from)?;
            value["timing"] = serde_json::to_value(&report.timing).map_err(HarnessError::from)?;
            print_json(&value)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else if e.is_divergence() {
                ExitCode::from(3)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_run_with_layer_list() {
        let cli = Cli::try_parse_from([
            "dyndiff", "run", "--config", "a.conf", "--scenario", "plane_wave", "--layers", "swarm,continuum",
            "--seed", "3", "--out", "o",
        ])
        .unwrap();
        let Command::Run(args) = cli.command else { panic!("not a run") };
        assert_eq!(args.layers, vec![Layer::Swarm, Layer::Continuum]);
        assert_eq!(args.seed, Some(3));
        assert!(!args.no_reconstruct);
    }

    #[test]
    fn layers_default_to_swarm_and_reference() {
        let cli = Cli::try_parse_from(["dyndiff", "run", "--config", "a", "--scenario", "s", "--out", "o"]).unwrap();
        let Command::Run(args) = cli.command else { panic!("not a run") };
        assert_eq!(args.layers, vec![Layer::Swarm, Layer::Reference]);
    }

    #[test]
    fn sweep_needs_grains_and_rejects_bad_layers() {
        let base = ["dyndiff", "sweep", "--config", "a", "--scenario", "s", "--out", "o"];
        assert!(Cli::try_parse_from(base).is_err());
        let cli = Cli::try_parse_from([&base[..], &["--grains", "0.2,0.1,0.05"]].concat()).unwrap();
        let Command::Sweep { grains, .. } = cli.command else { panic!("not a sweep") };
        assert_eq!(grains, vec![0.2, 0.1, 0.05]);
        assert!(Cli::try_parse_from([&base[..], &["--grains", "0.1", "--layers", "film"]].concat()).is_err());
    }
}
