//! Save a grown model, inspect its manifest and reload it bit-exactly.
//!
//! cargo run --release --example checkpoint_roundtrip

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secnn::checkpoint::{load_checkpoint, read_manifest, save_checkpoint};
use secnn::data::Normalization;
use secnn::trainer::{TrainConfig, TrainState};
use secnn::{ModelConfig, SecnnModel, Tensor};

fn main() -> secnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = SecnnModel::build_initial(3, 16, 10, ModelConfig::default(), &mut rng)?;
    model.insert_identity_unit(1, 1e-4, &mut rng)?;
    model.widen_block(2, 4, 1e-4, &mut rng)?;

    let dir = std::env::temp_dir().join("secnn_checkpoint_example");
    let config = TrainConfig::default();
    save_checkpoint(&dir, &model, &config, &TrainState::new(&config).summary(), Normalization::CIFAR10)?;

    let manifest = read_manifest(&dir)?;
    println!("checkpoint at {}", dir.display());
    println!("  format version {}", manifest.format_version);
    println!("  parameters     {}", manifest.param_count);
    println!("  running stats  {}", manifest.running_stat_count);
    println!("  tensors        {}", manifest.walker.len());

    let restored = load_checkpoint(&dir)?.model;
    let x = Tensor::from_fn(&[2, 3, 32, 32], |_| rng.gen_range(-1.0..1.0));
    let same = model.predict(&x, 2)?.data() == restored.predict(&x, 2)?.data();
    println!("eval outputs bit-identical after reload: {same}");
    Ok(())
}
