//! Desk-scale CIFAR-10 run: 200 training and 50 validation images per class,
//! default hyperparameters, 60 epochs.
//!
//! cargo run --release --example train_cifar10 -- /path/to/cifar-10-batches-bin [out_dir]

use secnn::run::{run_training_with, RunConfig};

fn main() -> secnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next() else {
        eprintln!("usage: train_cifar10 <cifar-10-batches-bin> [out_dir]");
        std::process::exit(2);
    };
    let config = RunConfig {
        dataset: Some(dir),
        out: args.next().unwrap_or_else(|| "runs/cifar10_desk".into()).into(),
        epochs: 60,
        train_per_class: Some(200),
        val_per_class: Some(50),
        ..RunConfig::default()
    };
    let outcome = run_training_with(&config, |r| {
        println!("epoch {:2}  loss {:.3}  val acc {:5.1}%  params {}", r.epoch, r.train_loss, 100.0 * r.val_accuracy, r.param_count);
    })?;
    println!("\n{}", outcome.summary);
    Ok(())
}
