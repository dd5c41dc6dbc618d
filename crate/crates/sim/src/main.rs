use std::path::PathBuf;
use std::process::ExitCode;

use adqsp::harness::{run_experiment, Experiment, ExperimentConfig, FULL_TRIALS};
use adqsp::Error;
use clap::Parser;

/// Monte Carlo driver for the ADQSP, SMPC and DP experiments.
///
/// Exit status: 0 when every check passes, 2 on an invalid config, 3 when
/// a check fails, 1 on any other error.
#[derive(Debug, Parser)]
#[command(name = "sim", version)]
struct Args {
    /// convergence, smpc-compare, dp-compare or attack-verify. Defaults to
    /// the config's `experiment` field.
    experiment: Option<Experiment>,
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, conflicts_with = "full")]
    trials: Option<usize>,
    /// Use the long trial count (10^4).
    #[arg(long)]
    full: bool,
    /// Output directory, default `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

fn resolve(args: &Args) -> Result<(Experiment, ExperimentConfig), Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    let exp = match (args.experiment, cfg.experiment) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::config("experiment", format!("command line says {a}, config says {b}")));
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(Error::config("experiment", "not given on the command line or in the config")),
    };
    cfg.experiment = Some(exp);
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if args.full {
        cfg.trials = FULL_TRIALS;
    }
    cfg.validate_for(exp)?;
    Ok((exp, cfg))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (exp, cfg) = match resolve(&args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("sim: {e}");
            return ExitCode::from(2);
        }
    };
    if args.print_config {
        println!("{}", cfg.to_json());
        return ExitCode::SUCCESS;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("out").join(exp.as_str()));
    let report = match run_experiment(exp, &cfg) {
        Ok(r) => r,
        Err(e @ Error::Config { .. }) => {
            eprintln!("sim: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("sim: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = report.write(&out, &cfg) {
        eprintln!("sim: writing {}: {e}", out.display());
        return ExitCode::from(1);
    }
    print!("{}", report.summary());
    println!("wrote {} files to {}", report.files.len() + 1, out.display());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}
