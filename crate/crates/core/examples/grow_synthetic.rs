//! A small network grown on synthetic stripes with a permissive threshold,
//! so several expansions happen within a few minutes.
//!
//! cargo run --release --example grow_synthetic [out_dir]

use secnn::run::{run_training_with, RunConfig};

fn main() -> secnn::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "runs/grow_synthetic".into());
    let config = RunConfig {
        dataset: Some("synthetic:striped-patterns".into()),
        out: out.into(),
        epochs: 30,
        tau: 1.05,
        synthetic_train_size: 1000,
        synthetic_val_size: 250,
        initial_channels: 8,
        ..RunConfig::default()
    };
    let outcome = run_training_with(&config, |r| {
        let note = match &r.proposal {
            Some(p) if p.applied => format!("  -> {:?} block {:?}", p.kind, p.block),
            _ => String::new(),
        };
        println!("epoch {:2}  val acc {:5.1}%  params {:6}{note}", r.epoch, 100.0 * r.val_accuracy, r.param_count);
    })?;
    println!("\n{}", outcome.summary);
    println!("final architecture: {:?}", outcome.model.describe().blocks.iter().map(|b| (b.units, b.out_channels)).collect::<Vec<_>>());
    Ok(())
}
