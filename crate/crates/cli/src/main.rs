use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmnn::config::{schema_json, ExperimentConfig};
use pmnn::pipeline::{self, ModelSource};
use pmnn::state::Split;

/// Exit status when training aborts on divergence.
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "pmnn",
    version,
    about = "Port-metriplectic learned simulators for a double thermoelastic pendulum"
)]
struct Cli {
    /// Experiment configuration (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. `--set train.epochs=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the reference system and write a split dataset.
    Generate {
        #[arg(long)]
        n_sims: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a port-metriplectic model on the dataset.
    Train {
        /// Continue from the run's checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Roll a model out and write error statistics.
    Eval(ModelArg),
    /// Thermodynamic audit of a model along the stored trajectories.
    Audit(ModelArg),
    /// Print the effective configuration.
    Config,
    /// Print the JSON schema of the configuration file.
    Schema,
}

#[derive(Args)]
struct ModelArg {
    /// `oracle`, `zero`, or a model directory; the run's model by default.
    #[arg(long)]
    model: Option<ModelSource>,
}

fn load_config(cli: &Cli, extra: &[String]) -> pmnn::Result<ExperimentConfig> {
    let sets: Vec<String> = cli.sets.iter().chain(extra).cloned().collect();
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path, &sets)?,
        None => ExperimentConfig::from_toml(&ExperimentConfig::default().to_toml()?, &sets)?,
    };
    let workers = cfg.effective_workers()?;
    if workers > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
    Ok(cfg)
}

fn print_table(report: &pmnn::evaluator::EvalReport) {
    for s in &report.splits {
        let tag = match s.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        println!("{tag} ({} rollouts, {} truncated)", s.n_trajectories, s.truncated);
        print!("{}", report.table(s.split).unwrap_or_default());
    }
}

fn run(cli: &Cli) -> pmnn::Result<ExitCode> {
    match &cli.command {
        Command::Generate { n_sims, seed } => {
            let mut extra = Vec::new();
            if let Some(n) = n_sims {
                extra.push(format!("dataset.n_sims={n}"));
            }
            if let Some(s) = seed {
                extra.push(format!("dataset.seed={s}"));
            }
            let cfg = load_config(cli, &extra)?;
            let summary = pipeline::generate(&cfg)?;
            println!("{}", summary.line());
            println!("wrote {}", cfg.paths.dataset.display());
        }
        Command::Train { resume } => {
            let cfg = load_config(cli, &[])?;
            let out = pipeline::train(&cfg, *resume)?;
            let s = &out.summary;
            println!(
                "{:?} after {} epochs; best epoch {} (train total {:.4e}, initial {:.4e}, test L_data {:.4e})",
                s.stop, s.epochs_run, s.best_epoch, s.best_total, s.initial_total, s.best_test_data
            );
            println!("wrote {}", cfg.paths.run.display());
            if let Some(msg) = out.divergence {
                eprintln!("error: {msg}");
                return Ok(ExitCode::from(EXIT_DIVERGED));
            }
        }
        Command::Eval(m) => {
            let cfg = load_config(cli, &[])?;
            let source = m.model.clone().unwrap_or_else(|| ModelSource::default_for(&cfg));
            let report = pipeline::eval(&cfg, &source)?;
            println!("evaluated {}", report.model);
            print_table(&report);
            println!("wrote {}", cfg.paths.eval.display());
        }
        Command::Audit(m) => {
            let cfg = load_config(cli, &[])?;
            let source = m.model.clone().unwrap_or_else(|| ModelSource::default_for(&cfg));
            let report = pipeline::audit(&cfg, &source)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Config => print!("{}", load_config(cli, &[])?.to_toml()?),
        Command::Schema => print!("{}", schema_json()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
