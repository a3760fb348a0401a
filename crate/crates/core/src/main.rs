use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvmc_core::harness::{self, output, ExperimentConfig, ExperimentKind, Outcome};
use mvmc_core::mlmc::{EstimatorKind, LevelSchedule};
use mvmc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mvmc", version, about = "Antithetic multilevel Monte Carlo for mean-field particle systems")]
struct Cli {
    /// Worker threads (wall time only; results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the CSV table and metadata file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Single estimator run.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Target RMSE, overriding the config.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Estimator name, overriding the config.
        #[arg(long)]
        estimator: Option<String>,
    },
    /// Rate experiment: an experiment kind or preset name.
    Rates {
        kind: String,
        #[command(flatten)]
        common: Common,
    },
    /// Print the level schedule for a target RMSE.
    Schedule {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value = "amlmc-euler")]
        estimator: String,
        #[arg(long, default_value_t = 1)]
        base_n: usize,
    },
    /// Fast invariant checks.
    Selftest,
}

fn load(common: &Common, preset: &str) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::preset(preset)?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(cfg: &ExperimentConfig, outcome: &Outcome, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(dir) => {
            let (csv, json) = output::write_outcome(cfg, outcome, dir)?;
            eprintln!("wrote {} and {}", csv.display(), json.display());
        }
        None => print!("{}", output::csv_string(&outcome.table)?),
    }
    for (name, fit) in &outcome.fits {
        match fit.fitted() {
            Some(f) => eprintln!("fit {name}: slope {:.4} ± {:.4}", f.slope, f.stderr_slope),
            None => eprintln!("fit {name}: all-zero series"),
        }
    }
    Ok(())
}

fn schedule(epsilon: f64, horizon: f64, estimator: &str, base_n: usize) -> Result<LevelSchedule> {
    match EstimatorKind::from_name(estimator)? {
        EstimatorKind::Ensemble => LevelSchedule::ensemble_from_epsilon(epsilon, horizon),
        EstimatorKind::AmlmcExact => LevelSchedule::exact_from_epsilon(epsilon, horizon)?.with_base_n(base_n),
        _ => LevelSchedule::from_epsilon(epsilon, horizon)?.with_base_n(base_n),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate {
            common,
            epsilon,
            estimator,
        } => {
            let mut cfg = load(&common, "estimate")?;
            if cfg.kind != ExperimentKind::Estimate {
                return Err(Error::Config(format!("estimate needs an estimate config, got {}", cfg.kind)));
            }
            if let Some(e) = epsilon {
                cfg.options.epsilon = Some(e);
                cfg.options.counts = None;
            }
            if estimator.is_some() {
                cfg.options.estimator = estimator;
            }
            let outcome = harness::run(&cfg)?;
            let report = outcome.report.as_ref().expect("estimate yields a report");
            println!("estimator {}", report.kind.name());
            println!("estimate {:.16e}", report.estimate);
            println!("cost_interactions {}", report.cost_interactions);
            println!("fingerprint {}", report.fingerprint());
            if let Some(dir) = &common.out {
                emit(&cfg, &outcome, Some(dir))?;
            }
            Ok(())
        }
        Command::Rates { kind, common } => {
            let cfg = load(&common, &kind)?;
            if common.config.is_some() && cfg.kind != ExperimentKind::from_name(&kind)? {
                return Err(Error::Config(format!("config describes {}, not {kind}", cfg.kind)));
            }
            let outcome = harness::run(&cfg)?;
            emit(&cfg, &outcome, common.out.as_ref())
        }
        Command::Schedule {
            epsilon,
            horizon,
            estimator,
            base_n,
        } => {
            let s = schedule(epsilon, horizon, &estimator, base_n)?;
            print!("{s}");
            println!("cost {}", s.cost(EstimatorKind::from_name(&estimator)?));
            Ok(())
        }
        Command::Selftest => {
            let checks = harness::selftest();
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            if ok {
                Ok(())
            } else {
                Err(Error::Data("selftest failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.root() {
                Error::Config(_) | Error::Parse(_) | Error::Unsupported(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
