use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use secnn::checkpoint::load_checkpoint;
use secnn::report::report_run;
use secnn::run::{load_run_data, run_training_with, RunConfig};
use secnn::trainer::evaluate;
use secnn::Error;

#[derive(Parser)]
#[command(name = "secnn", version, about = "Self-expanding CNN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, writing metrics and checkpoints to the output directory.
    Train(RunArgs),
    /// Evaluate a checkpoint on the validation split of a dataset.
    Evaluate {
        /// Checkpoint directory (holding manifest.json and weights.bin).
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the accuracy-versus-parameters summary of a run directory.
    Report {
        run_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CIFAR-10 directory or synthetic:separable-blobs / synthetic:striped-patterns.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set tau=3 --set initial_lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> secnn::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for assignment in &self.overrides {
            config.apply_override(assignment)?;
        }
        if let Some(d) = &self.dataset {
            config.dataset = Some(d.clone());
        }
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        if let Some(o) = &self.out {
            config.out = o.clone();
        }
        Ok(config)
    }
}

fn train(args: &RunArgs) -> secnn::Result<()> {
    let config = args.resolve()?;
    let outcome = run_training_with(&config, |r| {
        let event = match &r.proposal {
            Some(p) if p.applied => format!("  {:?} block {}", p.kind, p.block.unwrap_or_default()),
            _ => String::new(),
        };
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  acc {:>5.1}%  params {:>7}  lr {:.1e}{event}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            100.0 * r.val_accuracy,
            r.param_count,
            r.lr
        );
    })?;
    print!("{}", outcome.summary);
    println!("run directory: {}", config.out.display());
    Ok(())
}

fn evaluate_checkpoint(checkpoint: &PathBuf, args: &RunArgs) -> secnn::Result<()> {
    let config = args.resolve()?;
    let ck = load_checkpoint(checkpoint)?;
    let data = load_run_data(&config)?;
    let (loss, acc) = evaluate(&ck.model, &data.val, config.eval_batch_size)?;
    println!("checkpoint     {}", checkpoint.display());
    println!("params         {}", ck.model.param_count());
    println!("val_loss       {loss:.6}");
    println!("val_accuracy   {acc:.6}");
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::CorruptData(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train(args),
        Command::Evaluate { checkpoint, run } => evaluate_checkpoint(checkpoint, run),
        Command::Report { run_dir } => report_run(run_dir).map(|t| print!("{t}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
