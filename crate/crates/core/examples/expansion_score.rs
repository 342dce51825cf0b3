//! Natural expansion score of a model and every growth candidate.
//!
//! cargo run --release --example expansion_score

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use secnn::data::{synthetic_dataset, SyntheticKind};
use secnn::expansion::{natural_expansion_score, propose_expansion, score_statistics, ExpansionConfig};
use secnn::{ModelConfig, SecnnModel};

fn main() -> secnn::Result<()> {
    let data = synthetic_dataset(SyntheticKind::StripedPatterns, 256, 10, 3)?;
    let batch = data.batch(&(0..256).collect::<Vec<_>>());
    let model = SecnnModel::build_initial(3, 16, 10, ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let config = ExpansionConfig::default();

    let (g, fisher) = score_statistics(&model, &batch, 1e-5)?;
    let eta = natural_expansion_score(&g, &fisher, config.fisher_damping)?;
    println!("η(current) = {eta:.4} over {} samples, {} parameters", fisher.sample_count, g.len());

    let proposal = propose_expansion(&model, &batch, &config, 1e-5, 1)?;
    println!("{:>14} {:>5} {:>7} {:>10} {:>10} {:>7}", "kind", "block", "Δp", "η", "η_reg", "ratio");
    for c in &proposal.candidates {
        println!(
            "{:>14} {:>5} {:>7} {:>10.4} {:>10.4} {:>7.3}",
            format!("{:?}", c.kind),
            c.block,
            c.delta_p,
            c.eta,
            c.eta_regularized,
            c.eta_regularized / proposal.eta_current
        );
    }
    println!("decision at τ = {}: {:?} {:?}", config.tau, proposal.kind, proposal.block_idx);
    Ok(())
}
