//! Synthetic datasets, balanced subsets, the CIFAR-10 record codec,
//! horizontal flips and shuffled batch plans.
//!
//! cargo run --release --example data_pipeline

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use secnn::data::{
    encode_cifar10_records, parse_cifar10_records, random_hflip, synthetic_dataset, BatchPlan, SyntheticKind,
};

fn main() -> secnn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for kind in [SyntheticKind::SeparableBlobs, SyntheticKind::StripedPatterns] {
        let ds = synthetic_dataset(kind, 1000, 10, 7)?;
        println!("{kind:?}: {} images of {:?}, histogram {:?}", ds.len(), ds.image_shape(), ds.class_histogram());
    }

    let ds = synthetic_dataset(SyntheticKind::StripedPatterns, 500, 10, 1)?;
    let small = ds.subset(20, 3)?;
    println!("subset of 20 per class: {} images, histogram {:?}", small.len(), small.class_histogram());

    let bytes = encode_cifar10_records(&small.to_records());
    let back = parse_cifar10_records(&bytes)?;
    println!("{} bytes encode {} records; labels survive: {}", bytes.len(), back.len(), back.iter().map(|r| r.label as usize).eq(small.labels.iter().copied()));

    let mut images = small.batch(&[0, 1]).images;
    let before = images.clone();
    random_hflip(&mut images, 1.0, &mut rng)?;
    random_hflip(&mut images, 1.0, &mut rng)?;
    println!("double flip is the identity: {}", images == before);

    let plan = BatchPlan::new(small.len(), 64, &mut rng);
    println!("batch sizes: {:?}", plan.batches().map(|b| b.len()).collect::<Vec<_>>());
    Ok(())
}
