//! Inserting an identity unit or widening a block leaves the eval-mode
//! function unchanged when the noise is zero.
//!
//! cargo run --release --example function_preserving

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secnn::{ModelConfig, SecnnModel, Tensor};

fn main() -> secnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = SecnnModel::build_initial(3, 16, 10, ModelConfig::default(), &mut rng)?;
    let x = Tensor::from_fn(&[4, 3, 32, 32], |_| rng.gen_range(-2.0..2.0));
    let reference = model.predict(&x, 4)?;
    println!("initial model: {} parameters", model.param_count());

    for block in 0..model.num_blocks() {
        for noise in [0.0, 1e-4] {
            let mut deeper = model.clone();
            let added = deeper.insert_identity_unit(block, noise, &mut rng)?.delta_p;
            let mut wider = model.clone();
            let widened = wider.widen_block(block, 4, noise, &mut rng)?.delta_p;
            println!(
                "block {block} noise {noise:.0e}: insert +{added:5} max|Δlogit| {:.2e}   widen +{widened:5} max|Δlogit| {:.2e}",
                reference.max_abs_diff(&deeper.predict(&x, 4)?),
                reference.max_abs_diff(&wider.predict(&x, 4)?),
            );
        }
    }
    Ok(())
}
