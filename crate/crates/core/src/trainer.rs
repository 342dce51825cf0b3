//! Epoch loop: shuffled mini-batch training, validation, plateau learning-rate
//! halving, and the per-epoch expansion check with cooldown.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Mode};
use crate::data::{random_hflip, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::expansion::{apply_candidate, propose_expansion, ExpansionConfig, ExpansionKind, ExpansionProposal};
use crate::model::SecnnModel;
use crate::optim::{Optimizer, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f32,
    /// Epochs without a new best validation accuracy before the rate halves.
    pub lr_patience: usize,
    pub dropout_conv: f32,
    pub dropout_fc: f32,
    pub l1_coeff: f32,
    pub hflip_probability: f32,
    /// Epochs over which a freshly inserted unit's activation moves from
    /// linear to the model's LeakyReLU slope.
    pub slope_warmup_epochs: usize,
    pub eval_batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub expansion: ExpansionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 512,
            initial_lr: 2e-3,
            lr_patience: 15,
            dropout_conv: 0.1,
            dropout_fc: 0.05,
            l1_coeff: 1e-5,
            hflip_probability: 0.5,
            slope_warmup_epochs: 10,
            eval_batch_size: 256,
            seed: 0,
            optimizer: OptimizerKind::default(),
            expansion: ExpansionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.initial_lr >= 0.0) {
            return Err(Error::Config("initial_lr must be non-negative".into()));
        }
        if self.lr_patience == 0 {
            return Err(Error::Config("lr_patience must be positive".into()));
        }
        for (name, rate) in [("dropout_conv", self.dropout_conv), ("dropout_fc", self.dropout_fc)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {rate}")));
            }
        }
        if !(self.l1_coeff >= 0.0) {
            return Err(Error::Config("l1_coeff must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.hflip_probability) {
            return Err(Error::Config("hflip_probability must lie in [0, 1]".into()));
        }
        self.expansion.validate()
    }
}

/// Serialized form of the (possibly `-inf`) best scores: JSON has no
/// infinities, so non-finite values are written as `null`.
mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f32, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f32(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f32, D::Error> {
        Ok(Option::<f32>::deserialize(d)?.unwrap_or(f32::NEG_INFINITY))
    }
}

/// Proposal outcome as written to the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub kind: ExpansionKind,
    pub block: Option<usize>,
    pub eta_current: f32,
    #[serde(with = "nonfinite_as_null")]
    pub eta_layer_best: f32,
    #[serde(with = "nonfinite_as_null")]
    pub eta_widen_best: f32,
    pub delta_p: usize,
    pub candidates: Vec<crate::expansion::Candidate>,
    pub applied: bool,
}

impl ProposalRecord {
    fn from_proposal(p: &ExpansionProposal, applied: bool) -> Self {
        Self {
            kind: p.kind,
            block: p.block_idx,
            eta_current: p.eta_current,
            eta_layer_best: p.eta_layer_best,
            eta_widen_best: p.eta_widen_best,
            delta_p: p.delta_p,
            candidates: p.candidates.clone(),
            applied,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f32,
    pub val_loss: f32,
    pub val_accuracy: f32,
    /// Size of the model that produced this epoch's validation numbers.
    pub param_count: usize,
    pub lr: f32,
    pub proposal: Option<ProposalRecord>,
}

impl MetricsRecord {
    pub fn expanded(&self) -> bool {
        self.proposal.as_ref().is_some_and(|p| p.applied)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStateSummary {
    pub epoch: usize,
    pub lr: f32,
    pub best_val_accuracy: f32,
    pub epochs_since_improvement: usize,
    pub cooldown_remaining: usize,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub lr: f32,
    pub best_val_accuracy: f32,
    pub epochs_since_improvement: usize,
    pub cooldown_remaining: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<MetricsRecord>,
    pub optimizer: Optimizer,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            epoch: 0,
            lr: config.initial_lr,
            best_val_accuracy: f32::NEG_INFINITY,
            epochs_since_improvement: 0,
            cooldown_remaining: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            history: Vec::new(),
            optimizer: Optimizer::new(config.optimizer),
        }
    }

    pub fn summary(&self) -> TrainStateSummary {
        TrainStateSummary {
            epoch: self.epoch,
            lr: self.lr,
            best_val_accuracy: if self.best_val_accuracy.is_finite() {
                self.best_val_accuracy
            } else {
                0.0
            },
            epochs_since_improvement: self.epochs_since_improvement,
            cooldown_remaining: self.cooldown_remaining,
        }
    }

    /// Rebuilds a state from a checkpoint summary. Optimizer moments and the
    /// generator position are not persisted; they restart from `config`.
    pub fn resume(config: &TrainConfig, summary: &TrainStateSummary) -> Self {
        let mut state = Self::new(config);
        state.epoch = summary.epoch;
        state.lr = summary.lr;
        state.best_val_accuracy = summary.best_val_accuracy;
        state.epochs_since_improvement = summary.epochs_since_improvement;
        state.cooldown_remaining = summary.cooldown_remaining;
        state.rng = ChaCha8Rng::seed_from_u64(config.seed ^ (summary.epoch as u64).rotate_left(32));
        state
    }
}

/// One shuffled pass over `train`. Returns the sample-weighted mean loss
/// (cross-entropy plus L1 penalty).
pub fn train_epoch(
    model: &mut SecnnModel,
    train: &Dataset,
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<f32> {
    let plan = BatchPlan::new(train.len(), config.batch_size, &mut state.rng);
    let batches_per_epoch = plan.order.len().div_ceil(plan.batch_size).max(1);
    let slope_step = if config.slope_warmup_epochs == 0 {
        f32::INFINITY
    } else {
        (1.0 - model.config().leaky_slope) / (config.slope_warmup_epochs * batches_per_epoch) as f32
    };
    let mut total = 0.0f64;
    for indices in plan.batches() {
        let mut batch = train.batch(indices);
        random_hflip(&mut batch.images, config.hflip_probability, &mut state.rng)?;
        model.zero_grad();
        let mut g = Graph::new();
        let fw = model.forward(&mut g, batch.images, Mode::Train, &mut state.rng)?;
        let ce = g.cross_entropy(fw.logits, &batch.labels)?;
        let loss = if config.l1_coeff > 0.0 {
            let l1 = g.l1_penalty(&fw.params, config.l1_coeff);
            g.add(ce, l1)?
        } else {
            ce
        };
        total += g.value(loss).data()[0] as f64 * indices.len() as f64;
        let grads = g.backward(loss)?;
        grads.accumulate_into(model.parameters_mut());
        state.optimizer.step(model.parameters_mut(), state.lr);
        model.anneal_slopes(slope_step);
    }
    Ok((total / train.len() as f64) as f32)
}

/// Eval-mode mean cross-entropy and accuracy over a dataset.
pub fn evaluate(model: &SecnnModel, data: &Dataset, batch_size: usize) -> Result<(f32, f32)> {
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk);
        let mut g = Graph::new();
        let fw = model.forward_eval(&mut g, batch.images)?;
        let ce = g.cross_entropy(fw.logits, &batch.labels)?;
        loss += g.value(ce).data()[0] as f64 * chunk.len() as f64;
        let logits = g.value(fw.logits);
        let k = logits.dim(1);
        for (row, &label) in logits.data().chunks(k).zip(&batch.labels) {
            if argmax(row) == label {
                correct += 1;
            }
        }
    }
    Ok((
        (loss / data.len() as f64) as f32,
        correct as f32 / data.len() as f32,
    ))
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Plateau schedule: a strict improvement resets the counter; `patience`
/// consecutive non-improving epochs halve the learning rate.
pub fn lr_schedule_step(state: &mut TrainState, val_accuracy: f32, patience: usize) {
    if val_accuracy > state.best_val_accuracy {
        state.best_val_accuracy = val_accuracy;
        state.epochs_since_improvement = 0;
        return;
    }
    state.epochs_since_improvement += 1;
    if state.epochs_since_improvement >= patience {
        state.lr *= 0.5;
        state.epochs_since_improvement = 0;
    }
}

/// Result of the per-epoch expansion check.
#[derive(Clone, Debug)]
pub struct ExpansionStep {
    pub proposal: Option<ExpansionProposal>,
    /// The model as it was just before a mutation was applied.
    pub previous: Option<SecnnModel>,
}

impl ExpansionStep {
    pub fn applied(&self) -> bool {
        self.previous.is_some()
    }
}

/// Runs the growth check unless a cooldown is active. When a candidate wins,
/// the very mutation that was scored is applied to `model`.
pub fn maybe_expand(
    model: &mut SecnnModel,
    train: &Dataset,
    config: &TrainConfig,
    state: &mut TrainState,
) -> Result<ExpansionStep> {
    if state.cooldown_remaining > 0 {
        state.cooldown_remaining -= 1;
        return Ok(ExpansionStep {
            proposal: None,
            previous: None,
        });
    }
    let n = config.expansion.score_batch_size.min(train.len());
    let mut picks = index::sample(&mut state.rng, train.len(), n).into_vec();
    picks.sort_unstable();
    let score_batch = train.batch(&picks);
    let seed: u64 = state.rng.gen();
    let proposal = propose_expansion(model, &score_batch, &config.expansion, config.l1_coeff, seed)?;
    let mut previous = None;
    if let Some(block) = proposal.block_idx {
        let before = model.clone();
        apply_candidate(model, proposal.kind, block, &config.expansion, proposal.seed)?;
        state.optimizer.retain(model.parameters());
        state.cooldown_remaining = config.expansion.cooldown_epochs;
        previous = Some(before);
    }
    Ok(ExpansionStep {
        proposal: Some(proposal),
        previous,
    })
}

/// Hooks for persisting a run as it progresses.
pub trait FitObserver {
    fn on_epoch(&mut self, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    /// Called with the fully trained model of the complexity level that is
    /// being left behind, before the mutation takes effect.
    fn on_expansion(&mut self, _previous: &SecnnModel, _state: &TrainState, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }

    fn on_best(&mut self, _model: &SecnnModel, _state: &TrainState, _record: &MetricsRecord) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores every event.
pub struct NoObserver;

impl FitObserver for NoObserver {}

/// Full protocol: per epoch train → evaluate → schedule → expansion check.
pub fn fit(
    model: &mut SecnnModel,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FitObserver,
) -> Result<TrainState> {
    let mut state = TrainState::new(config);
    fit_from(model, train, val, config, &mut state, observer)?;
    Ok(state)
}

/// Continues training from an existing state until `config.epochs` epochs
/// have completed.
pub fn fit_from(
    model: &mut SecnnModel,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
    state: &mut TrainState,
    observer: &mut dyn FitObserver,
) -> Result<()> {
    config.validate()?;
    model.set_dropout(config.dropout_conv, config.dropout_fc);
    while state.epoch < config.epochs {
        let train_loss = train_epoch(model, train, config, state)?;
        let (val_loss, val_accuracy) = evaluate(model, val, config.eval_batch_size)?;
        let improved = val_accuracy > state.best_val_accuracy;
        lr_schedule_step(state, val_accuracy, config.lr_patience);
        let param_count = model.param_count();
        let lr = state.lr;
        let evaluated = improved.then(|| model.clone());
        let step = maybe_expand(model, train, config, state)?;
        state.epoch += 1;
        let record = MetricsRecord {
            epoch: state.epoch,
            train_loss,
            val_loss,
            val_accuracy,
            param_count,
            lr,
            proposal: step
                .proposal
                .as_ref()
                .map(|p| ProposalRecord::from_proposal(p, step.applied())),
        };
        state.history.push(record.clone());
        observer.on_epoch(&record)?;
        if let Some(best) = &evaluated {
            observer.on_best(best, state, &record)?;
        }
        if let Some(previous) = &step.previous {
            observer.on_expansion(previous, state, &record)?;
        }
    }
    Ok(())
}
