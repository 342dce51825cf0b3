//! Natural expansion score and the when/where/what growth decision.
//!
//! The score of a model on a batch is `η = gᵀ F⁻¹ g`, where `g` is the mean
//! loss gradient and `F` the diagonal of the empirical Fisher, i.e. the mean
//! of squared per-sample gradients. Candidate models are penalized by
//! `exp(-λ · Δp²)` for the parameters they add.
//!
//! Gradients used for scoring are taken in eval mode (running batch-norm
//! statistics, no dropout) so that every sample's gradient is independent of
//! the rest of the batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::SecnnModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionConfig {
    /// Ratio a candidate's score must exceed relative to the current model.
    pub tau: f32,
    /// Penalty coefficient on the squared parameter increase.
    pub lambda_n: f32,
    /// Channels added per widening.
    pub channel_increment: usize,
    /// Scale of the Gaussian initialization of new weights.
    pub noise_coeff: f32,
    /// Added to every Fisher diagonal entry before inversion.
    pub fisher_damping: f32,
    pub score_batch_size: usize,
    pub cooldown_epochs: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            lambda_n: 1e-8,
            channel_increment: 4,
            noise_coeff: 1e-4,
            fisher_damping: 1e-8,
            score_batch_size: 512,
            cooldown_epochs: 10,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("tau must exceed 1, got {}", self.tau)));
        }
        if !(self.lambda_n >= 0.0) {
            return Err(Error::Config("lambda_n must be non-negative".into()));
        }
        if self.channel_increment == 0 {
            return Err(Error::Config("channel_increment must be at least 1".into()));
        }
        if !(self.fisher_damping > 0.0) {
            return Err(Error::Config("fisher_damping must be positive".into()));
        }
        if self.score_batch_size == 0 {
            return Err(Error::Config("score_batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal of the empirical Fisher, aligned with the parameter walker.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherDiagonal {
    pub entries: Vec<f32>,
    pub sample_count: usize,
}

fn flatten_grads(model: &SecnnModel, grads: &crate::autograd::Gradients) -> Vec<f32> {
    let mut flat = Vec::with_capacity(model.param_count());
    for p in model.parameters() {
        match grads.param(p.id) {
            Some(g) => flat.extend_from_slice(g.data()),
            None => flat.extend(std::iter::repeat(0.0).take(p.value.numel())),
        }
    }
    flat
}

fn l1_subgradient(model: &SecnnModel, coeff: f32) -> Vec<f32> {
    model
        .flat_params()
        .into_iter()
        .map(|v| {
            if v > 0.0 {
                coeff
            } else if v < 0.0 {
                -coeff
            } else {
                0.0
            }
        })
        .collect()
}

/// Gradient of the mean batch loss (cross-entropy plus `l1_coeff · Σ|θ|`),
/// flattened in walker order.
pub fn mean_gradient(model: &SecnnModel, batch: &Batch, l1_coeff: f32) -> Result<Vec<f32>> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut g = Graph::new();
    let fw = model.forward_eval(&mut g, batch.images.clone())?;
    let ce = g.cross_entropy(fw.logits, &batch.labels)?;
    let loss = if l1_coeff > 0.0 {
        let l1 = g.l1_penalty(&fw.params, l1_coeff);
        g.add(ce, l1)?
    } else {
        ce
    };
    let grads = g.backward(loss)?;
    Ok(flatten_grads(model, &grads))
}

/// Gradient of the unregularized loss of every sample, one vector each.
pub fn per_sample_gradients(model: &SecnnModel, batch: &Batch) -> Result<Vec<Vec<f32>>> {
    (0..batch.len())
        .map(|i| {
            let sample = batch.sample(i);
            let mut g = Graph::new();
            let fw = model.forward_eval(&mut g, sample.images)?;
            let loss = g.cross_entropy(fw.logits, &sample.labels)?;
            let grads = g.backward(loss)?;
            Ok(flatten_grads(model, &grads))
        })
        .collect()
}

/// Mean gradient (with L1) and Fisher diagonal from a single per-sample sweep.
pub fn score_statistics(model: &SecnnModel, batch: &Batch, l1_coeff: f32) -> Result<(Vec<f32>, FisherDiagonal)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let p = model.param_count();
    let mut sum = vec![0.0f64; p];
    let mut sum_sq = vec![0.0f64; p];
    for i in 0..batch.len() {
        let sample = batch.sample(i);
        let mut g = Graph::new();
        let fw = model.forward_eval(&mut g, sample.images)?;
        let loss = g.cross_entropy(fw.logits, &sample.labels)?;
        let grads = g.backward(loss)?;
        for ((s, q), v) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(flatten_grads(model, &grads)) {
            *s += v as f64;
            *q += (v as f64) * (v as f64);
        }
    }
    let n = batch.len() as f64;
    let l1 = l1_subgradient(model, l1_coeff);
    let mean = sum.iter().zip(&l1).map(|(s, r)| (s / n) as f32 + r).collect();
    let fisher = FisherDiagonal {
        entries: sum_sq.iter().map(|q| (q / n) as f32).collect(),
        sample_count: batch.len(),
    };
    Ok((mean, fisher))
}

/// `F_ii = (1/N) Σ_n g_{n,i}²` over per-sample gradients of the
/// unregularized loss.
pub fn empirical_fisher_diag(model: &SecnnModel, batch: &Batch) -> Result<FisherDiagonal> {
    Ok(score_statistics(model, batch, 0.0)?.1)
}

/// `η = Σ_i g_i² / (F_ii + damping)`.
pub fn natural_expansion_score(g: &[f32], fisher: &FisherDiagonal, damping: f32) -> Result<f32> {
    if g.len() != fisher.entries.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} entries, Fisher diagonal {}",
            g.len(),
            fisher.entries.len()
        )));
    }
    let eta: f64 = g
        .iter()
        .zip(&fisher.entries)
        .map(|(&gi, &fi)| {
            let gi = gi as f64;
            gi * gi / (fi as f64 + damping as f64)
        })
        .sum();
    Ok(eta as f32)
}

/// `η · exp(-λ · Δp²)`.
pub fn regularized_score(eta: f32, delta_p: usize, lambda_n: f32) -> f32 {
    let dp = delta_p as f64;
    (eta as f64 * (-(lambda_n as f64) * dp * dp).exp()) as f32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpansionKind {
    AddLayer,
    WidenChannels,
    NoExpansion,
}

/// One scored candidate model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: ExpansionKind,
    pub block: usize,
    pub delta_p: usize,
    pub eta: f32,
    pub eta_regularized: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionProposal {
    pub kind: ExpansionKind,
    pub block_idx: Option<usize>,
    pub eta_current: f32,
    /// Best regularized add-layer score; `-inf` when every block is full.
    pub eta_layer_best: f32,
    /// Best regularized widening score; `-inf` when no widening is legal.
    pub eta_widen_best: f32,
    /// Parameter increase of the chosen candidate (0 for no expansion).
    pub delta_p: usize,
    pub candidates: Vec<Candidate>,
    /// Seed from which every candidate's initialization noise was derived.
    pub seed: u64,
}

/// Applies the threshold rule: a kind wins only if it strictly beats the
/// other kind and its ratio to the current score strictly exceeds `tau`.
pub fn decide(
    eta_current: f32,
    layer_best: Option<(usize, f32)>,
    widen_best: Option<(usize, f32)>,
    tau: f32,
) -> (ExpansionKind, Option<usize>) {
    let eta_l = layer_best.map_or(f32::NEG_INFINITY, |(_, e)| e);
    let eta_i = widen_best.map_or(f32::NEG_INFINITY, |(_, e)| e);
    // `x / η_c > τ` written multiplicatively so that η_c = 0 needs no division.
    let clears = |eta: f32| (eta as f64) > tau as f64 * eta_current as f64;
    if eta_l > eta_i && clears(eta_l) {
        (ExpansionKind::AddLayer, layer_best.map(|(b, _)| b))
    } else if eta_i > eta_l && clears(eta_i) {
        (ExpansionKind::WidenChannels, widen_best.map(|(b, _)| b))
    } else {
        (ExpansionKind::NoExpansion, None)
    }
}

/// Seed of the initialization noise for one candidate mutation.
pub fn candidate_seed(seed: u64, kind: ExpansionKind, block: usize) -> u64 {
    let tag = match kind {
        ExpansionKind::AddLayer => 1u64,
        ExpansionKind::WidenChannels => 2,
        ExpansionKind::NoExpansion => 3,
    };
    seed ^ tag.wrapping_mul(0xA24B_AED4_963E_E407) ^ (block as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Performs the mutation a candidate stands for, with its deterministic noise.
pub fn apply_candidate(
    model: &mut SecnnModel,
    kind: ExpansionKind,
    block: usize,
    config: &ExpansionConfig,
    seed: u64,
) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(candidate_seed(seed, kind, block));
    let report = match kind {
        ExpansionKind::AddLayer => model.insert_identity_unit(block, config.noise_coeff, &mut rng)?,
        ExpansionKind::WidenChannels => {
            model.widen_block(block, config.channel_increment, config.noise_coeff, &mut rng)?
        }
        ExpansionKind::NoExpansion => return Ok(0),
    };
    Ok(report.delta_p)
}

fn score_model(model: &SecnnModel, batch: &Batch, config: &ExpansionConfig, l1_coeff: f32) -> Result<f32> {
    let (g, fisher) = score_statistics(model, batch, l1_coeff)?;
    natural_expansion_score(&g, &fisher, config.fisher_damping)
}

fn best(cands: &[Candidate], kind: ExpansionKind) -> Option<(usize, f32)> {
    let mut out: Option<(usize, f32)> = None;
    for c in cands.iter().filter(|c| c.kind == kind) {
        if out.map_or(true, |(_, e)| c.eta_regularized > e) {
            out = Some((c.block, c.eta_regularized));
        }
    }
    out
}

/// Scores the current model and every legal single-step expansion of it on
/// `batch`, then decides whether and how to grow. The input model is never
/// modified; candidates are evaluated on clones.
pub fn propose_expansion(
    model: &SecnnModel,
    batch: &Batch,
    config: &ExpansionConfig,
    l1_coeff: f32,
    seed: u64,
) -> Result<ExpansionProposal> {
    config.validate()?;
    let eta_current = score_model(model, batch, config, l1_coeff)?;
    let mut candidates = Vec::new();
    for kind in [ExpansionKind::AddLayer, ExpansionKind::WidenChannels] {
        for block in 0..model.num_blocks() {
            let mut trial = model.clone();
            let delta_p = match apply_candidate(&mut trial, kind, block, config, seed) {
                Ok(dp) => dp,
                Err(Error::CapacityExceeded { .. }) | Err(Error::Config(_)) => continue,
                Err(e) => return Err(e),
            };
            let eta = score_model(&trial, batch, config, l1_coeff)?;
            candidates.push(Candidate {
                kind,
                block,
                delta_p,
                eta,
                eta_regularized: regularized_score(eta, delta_p, config.lambda_n),
            });
        }
    }
    let layer_best = best(&candidates, ExpansionKind::AddLayer);
    let widen_best = best(&candidates, ExpansionKind::WidenChannels);
    let (kind, block_idx) = decide(eta_current, layer_best, widen_best, config.tau);
    let delta_p = block_idx
        .and_then(|b| candidates.iter().find(|c| c.kind == kind && c.block == b))
        .map_or(0, |c| c.delta_p);
    Ok(ExpansionProposal {
        kind,
        block_idx,
        eta_current,
        eta_layer_best: layer_best.map_or(f32::NEG_INFINITY, |(_, e)| e),
        eta_widen_best: widen_best.map_or(f32::NEG_INFINITY, |(_, e)| e),
        delta_p,
        candidates,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fisher(entries: &[f32]) -> FisherDiagonal {
        FisherDiagonal {
            entries: entries.to_vec(),
            sample_count: 1,
        }
    }

    #[test]
    fn score_closed_forms() {
        assert_eq!(natural_expansion_score(&[3.0, 4.0], &fisher(&[1.0, 1.0]), 0.0).unwrap(), 25.0);
        assert_eq!(natural_expansion_score(&[2.0, 2.0], &fisher(&[1.0, 4.0]), 0.0).unwrap(), 5.0);
        assert!(matches!(
            natural_expansion_score(&[1.0], &fisher(&[1.0, 1.0]), 0.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn regularization_closed_forms() {
        assert_eq!(regularized_score(7.5, 0, 0.3), 7.5);
        let lambda = std::f32::consts::LN_2 / 100.0;
        let halved = regularized_score(8.0, 10, lambda);
        assert!((halved - 4.0).abs() <= 4.0 * f32::EPSILON * 4.0, "{halved}");
    }

    #[test]
    fn decision_rule_examples() {
        assert_eq!(
            decide(10.0, Some((1, 25.0)), Some((0, 15.0)), 2.0),
            (ExpansionKind::AddLayer, Some(1))
        );
        assert_eq!(
            decide(10.0, Some((1, 15.0)), Some((0, 14.0)), 2.0),
            (ExpansionKind::NoExpansion, None)
        );
        assert_eq!(
            decide(10.0, Some((1, 30.0)), Some((2, 30.0)), 2.0),
            (ExpansionKind::NoExpansion, None)
        );
        assert_eq!(
            decide(10.0, None, Some((2, 30.0)), 2.0),
            (ExpansionKind::WidenChannels, Some(2))
        );
        assert_eq!(decide(10.0, None, Some((2, 15.0)), 2.0), (ExpansionKind::NoExpansion, None));
    }

    #[test]
    fn config_validation() {
        assert!(ExpansionConfig::default().validate().is_ok());
        let bad = ExpansionConfig {
            tau: 1.0,
            ..ExpansionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExpansionConfig {
            fisher_damping: 0.0,
            ..ExpansionConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
