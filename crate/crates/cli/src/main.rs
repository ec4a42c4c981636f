use anyhow::Context;
use clap::{Parser, Subcommand};
use shapeforge_cli::report::compare_files;
use shapeforge_cli::{thread_cap, CliError, Overrides, Run, RunConfig};
use shapeforge_core::trainer::TrainMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "shapeforge", version, about = "Shape-sensitivity augmentation experiments on synthetic shape/texture data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the train, test, conflict, readout and factor-pair datasets.
    Gen(#[command(flatten)] Overrides),
    /// Materialize the first epoch's augmented set with provenance.
    Augment(#[command(flatten)] Overrides),
    /// Train one mode and write its checkpoint and log.
    Train {
        #[arg(long, value_parser = parse_mode)]
        mode: TrainMode,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint and write its metrics report.
    Eval {
        #[arg(long, value_parser = parse_mode)]
        mode: TrainMode,
        /// Checkpoint to evaluate instead of the run's own.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print B - A deltas between two metrics reports.
    Compare {
        report_a: PathBuf,
        report_b: PathBuf,
        /// Also write the comparison as JSON.
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
    },
    /// Generate, train and evaluate every configured mode, then compare.
    RunAll(#[command(flatten)] Overrides),
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse().map_err(|e: shapeforge_core::Error| e.to_string())
}

fn open(overrides: &Overrides) -> anyhow::Result<Run> {
    let threads = thread_cap()?;
    let config = RunConfig::load(overrides)?;
    let run = Run::open(config, threads)?;
    println!("run directory: {}", run.root.display());
    Ok(run)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let threads = thread_cap()?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")?;
    match cli.command {
        Command::Gen(o) => {
            let run = open(&o)?;
            for m in run.gen()? {
                println!("{:<10} {:>6} records  sha256 {}", m.split, m.count, m.sha256);
            }
        }
        Command::Augment(o) => {
            let m = open(&o)?.augment()?;
            println!("{} {} records  sha256 {}", m.split, m.count, m.sha256);
        }
        Command::Train { mode, overrides } => {
            let run = open(&overrides)?;
            let log = run.train(mode)?;
            if let Some(last) = log.last() {
                println!("final epoch {}: loss {:.4}, train acc {:.4}", last.epoch, last.train_loss, last.train_acc);
            }
            println!("checkpoint: {}", run.checkpoint_path(mode).display());
        }
        Command::Eval { mode, checkpoint, overrides } => {
            let run = open(&overrides)?;
            let report = run.eval(mode, checkpoint.as_deref())?;
            print!("{}", report.to_json()?);
        }
        Command::Compare { report_a, report_b, json } => {
            let comparison = compare_files(&report_a, &report_b)?;
            print!("{}", comparison.to_text());
            if let Some(path) = json {
                std::fs::write(&path, comparison.to_json()?).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::RunAll(o) => {
            let run = open(&o)?;
            let outcome = run.run_all()?;
            match outcome.comparison {
                Some(c) => print!("{}", c.to_text()),
                None => {
                    for r in outcome.reports {
                        print!("{}", r.to_json()?);
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = err.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            eprintln!("error: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
