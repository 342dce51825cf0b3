//! Oracles and fixtures shared by the integration tests and the acceptance
//! runner. Nothing here calls into the library's scoring or decision code;
//! the oracles recompute those quantities from raw gradients.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use secnn::data::{Batch, Dataset, Normalization};
use secnn::expansion::{candidate_seed, mean_gradient, ExpansionConfig, ExpansionKind};
use secnn::{Graph, ModelConfig, Result, SecnnModel, Tensor, Var};

/// Central-difference step used by every gradient check.
pub const FD_STEP: f32 = 1e-3;
/// Maximum accepted relative error between analytic and numeric gradients,
/// measured per tensor as `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.
pub const FD_REL_TOL: f64 = 1e-2;
/// Denominator floor: tensors whose gradient norm is below it (such as conv
/// biases feeding a train-mode batch-norm, whose true gradient is zero) are
/// judged on absolute error `FD_REL_TOL · FD_REL_FLOOR` instead, which sits
/// above the f32 rounding noise of a central difference.
pub const FD_REL_FLOOR: f64 = 1e-1;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// Uniform values whose magnitude is at least `gap`, keeping inputs away from
/// the kinks of piecewise-linear ops.
pub fn away_from_zero(shape: &[usize], gap: f32, hi: f32, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(gap..hi);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced by at least `gap`, in random order.
pub fn distinct(shape: &[usize], gap: f32, r: &mut ChaCha8Rng) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * gap).collect();
    v.shuffle(r);
    Tensor::new(shape.to_vec(), v).unwrap()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_REL_FLOOR)
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.
pub fn tensor_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(FD_REL_FLOOR)
}

/// Worst relative error between backprop and central differences for every
/// element of every input of `build`. Non-scalar outputs are reduced with a
/// fixed random weighting `Σ r·y`, evaluated in f64 on the numeric side.
pub fn op_gradient_error<F>(inputs: &[Tensor], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let forward = |xs: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let leaves: Vec<Var> = xs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &leaves).expect("op builds");
        (g, leaves, out)
    };
    let (probe, _, out) = forward(inputs);
    let out_shape = probe.value(out).shape().to_vec();
    let weights = uniform(&out_shape, -1.0, 1.0, &mut rng(seed ^ 0x5EED));
    let scalar = probe.value(out).numel() == 1;
    let reduce = |y: &Tensor| -> f64 {
        if scalar {
            y.data()[0] as f64
        } else {
            y.data().iter().zip(weights.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
        }
    };

    let (mut g, leaves, out) = forward(inputs);
    let loss = if scalar {
        out
    } else {
        let w = g.input(weights.clone());
        let prod = g.mul(out, w).unwrap();
        g.sum(prod)
    };
    let grads = g.backward(loss).unwrap();

    let mut worst = 0.0f64;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*leaf) {
            Some(t) => t.data().iter().map(|&v| v as f64).collect(),
            None => vec![0.0; inputs[i].numel()],
        };
        let numeric: Vec<f64> = (0..inputs[i].numel())
            .map(|j| {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += FD_STEP;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= FD_STEP;
                let (gp, _, op) = forward(&plus);
                let (gm, _, om) = forward(&minus);
                (reduce(gp.value(op)) - reduce(gm.value(om))) / (2.0 * FD_STEP as f64)
            })
            .collect();
        worst = worst.max(tensor_rel_err(&analytic, &numeric));
    }
    worst
}

/// Image fixture with values in `[-1, 1]` and labels below `classes`.
pub fn random_batch(n: usize, channels: usize, side: usize, classes: usize, seed: u64) -> Batch {
    let mut r = rng(seed);
    Batch {
        images: uniform(&[n, channels, side, side], -1.0, 1.0, &mut r),
        labels: (0..n).map(|_| r.gen_range(0..classes)).collect(),
    }
}

pub fn random_dataset(n: usize, classes: usize, side: usize, seed: u64) -> Dataset {
    let b = random_batch(n, 3, side, classes, seed);
    Dataset::new(b.images, b.labels, classes, Normalization::IDENTITY).unwrap()
}

/// The 50-parameter model: 4×4 RGB input, one block of one channel, a
/// one-channel head, two hidden units and two classes.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        image_channels: 3,
        image_size: 4,
        num_classes: 2,
        head_channels: 1,
        hidden_units: 2,
        ..ModelConfig::default()
    }
}

pub fn toy_model(seed: u64) -> SecnnModel {
    SecnnModel::build_initial(1, 1, 3, toy_config(), &mut rng(seed)).unwrap()
}

/// Overwrites every running statistic with random but valid values.
pub fn scramble_running_stats(model: &mut SecnnModel, seed: u64) {
    let mut r = rng(seed);
    for s in model.running_stats_mut() {
        for m in s.mean.iter_mut() {
            *m = r.gen_range(-0.5..0.5);
        }
        for v in s.var.iter_mut() {
            *v = r.gen_range(0.5..2.0);
        }
    }
}

/// Per-sample gradients through the batched mean-gradient path, one
/// single-sample batch at a time, without the L1 term.
pub fn oracle_per_sample(model: &SecnnModel, batch: &Batch) -> Vec<Vec<f64>> {
    (0..batch.len())
        .map(|i| {
            mean_gradient(model, &batch.sample(i), 0.0)
                .unwrap()
                .into_iter()
                .map(f64::from)
                .collect()
        })
        .collect()
}

/// `(1/N) Σ_n g_n g_nᵀ`, formed densely.
pub fn dense_fisher(per_sample: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = per_sample[0].len();
    let n = per_sample.len() as f64;
    let mut f = vec![vec![0.0; p]; p];
    for g in per_sample {
        for i in 0..p {
            for j in 0..p {
                f[i][j] += g[i] * g[j] / n;
            }
        }
    }
    f
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// `gᵀ (diag(F) + damping·I)⁻¹ g` through a dense solve.
pub fn dense_score(g: &[f64], fisher_dense: &[Vec<f64>], damping: f64) -> f64 {
    let p = g.len();
    let mut m = vec![vec![0.0; p]; p];
    for i in 0..p {
        m[i][i] = fisher_dense[i][i] + damping;
    }
    let x = solve(m, g.to_vec());
    g.iter().zip(&x).map(|(a, b)| a * b).sum()
}

/// The score of `model` on `batch`, recomputed from scratch.
pub fn oracle_score(model: &SecnnModel, batch: &Batch, l1: f32, damping: f64) -> f64 {
    let g: Vec<f64> = mean_gradient(model, batch, l1).unwrap().into_iter().map(f64::from).collect();
    let fisher = dense_fisher(&oracle_per_sample(model, batch));
    dense_score(&g, &fisher, damping)
}

/// What the growth procedure should decide, by exhaustive enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct BruteForce {
    pub kind: ExpansionKind,
    pub block: Option<usize>,
    pub eta_current: f64,
    pub layer_best: f64,
    pub widen_best: f64,
    pub layer_candidates: usize,
}

pub fn brute_force_decision(
    model: &SecnnModel,
    batch: &Batch,
    config: &ExpansionConfig,
    l1: f32,
    seed: u64,
) -> BruteForce {
    let damping = config.fisher_damping as f64;
    let eta_c = oracle_score(model, batch, l1, damping);
    let mut layer: Vec<(usize, f64)> = Vec::new();
    let mut widen: Vec<(usize, f64)> = Vec::new();
    for block in 0..model.num_blocks() {
        if model.blocks()[block].units.len() < model.blocks()[block].capacity {
            let mut m = model.clone();
            let mut r = rng(candidate_seed(seed, ExpansionKind::AddLayer, block));
            m.insert_identity_unit(block, config.noise_coeff, &mut r).unwrap();
            let dp = (m.param_count() - model.param_count()) as f64;
            let eta = oracle_score(&m, batch, l1, damping) * (-(config.lambda_n as f64) * dp * dp).exp();
            layer.push((block, eta));
        }
        let mut m = model.clone();
        let mut r = rng(candidate_seed(seed, ExpansionKind::WidenChannels, block));
        if m.widen_block(block, config.channel_increment, config.noise_coeff, &mut r).is_ok() {
            let dp = (m.param_count() - model.param_count()) as f64;
            let eta = oracle_score(&m, batch, l1, damping) * (-(config.lambda_n as f64) * dp * dp).exp();
            widen.push((block, eta));
        }
    }
    let argmax = |v: &[(usize, f64)]| -> (Option<usize>, f64) {
        let mut best: (Option<usize>, f64) = (None, f64::NEG_INFINITY);
        for &(b, e) in v {
            if e > best.1 {
                best = (Some(b), e);
            }
        }
        best
    };
    let (lb, le) = argmax(&layer);
    let (wb, we) = argmax(&widen);
    let tau = config.tau as f64;
    let (kind, block) = if le > we && le / eta_c > tau {
        (ExpansionKind::AddLayer, lb)
    } else if we > le && we / eta_c > tau {
        (ExpansionKind::WidenChannels, wb)
    } else {
        (ExpansionKind::NoExpansion, None)
    };
    BruteForce {
        kind,
        block,
        eta_current: eta_c,
        layer_best: le,
        widen_best: we,
        layer_candidates: layer.len(),
    }
}

/// Largest relative deviation between two logit tensors, measured against
/// the largest reference magnitude.
pub fn logit_rel_dev(reference: &Tensor, other: &Tensor) -> f32 {
    let scale = reference.data().iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-12);
    reference.max_abs_diff(other) / scale
}

/// Worst finite-difference error of every differentiable op for one seed.
pub fn op_gradient_report(seed: u64) -> Vec<(&'static str, f64)> {
    use secnn::{Mode, RunningStats};
    let mut r = rng(seed);
    let mut out = Vec::new();

    let x = uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut r);
    let w = uniform(&[3, 2, 3, 3], -0.5, 0.5, &mut r);
    let b = uniform(&[3], -0.5, 0.5, &mut r);
    out.push(("conv2d 3x3 pad 1", op_gradient_error(&[x.clone(), w, b], seed, |g, v| g.conv2d(v[0], v[1], v[2], 1, 1))));
    let w = uniform(&[2, 2, 3, 3], -0.5, 0.5, &mut r);
    let b = uniform(&[2], -0.5, 0.5, &mut r);
    out.push(("conv2d 3x3 stride 2", op_gradient_error(&[x.clone(), w, b], seed, |g, v| g.conv2d(v[0], v[1], v[2], 2, 0))));
    let w = uniform(&[4, 2, 1, 1], -0.5, 0.5, &mut r);
    let b = uniform(&[4], -0.5, 0.5, &mut r);
    out.push(("conv2d 1x1", op_gradient_error(&[x, w, b], seed, |g, v| g.conv2d(v[0], v[1], v[2], 1, 0))));

    let x = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let gamma = uniform(&[2], 0.5, 1.5, &mut r);
    let beta = uniform(&[2], -0.5, 0.5, &mut r);
    let identity = RunningStats::identity(2);
    out.push((
        "batchnorm2d train",
        op_gradient_error(&[x.clone(), gamma.clone(), beta.clone()], seed, |g, v| {
            Ok(g.batchnorm2d(v[0], v[1], v[2], &identity, Mode::Train, 1e-5)?.0)
        }),
    ));
    let running = RunningStats {
        mean: vec![0.2, -0.1],
        var: vec![0.7, 1.6],
    };
    out.push((
        "batchnorm2d eval",
        op_gradient_error(&[x, gamma, beta], seed, |g, v| {
            Ok(g.batchnorm2d(v[0], v[1], v[2], &running, Mode::Eval, 1e-5)?.0)
        }),
    ));

    let x = away_from_zero(&[2, 3, 4], 0.01, 1.0, &mut r);
    out.push(("leaky_relu", op_gradient_error(&[x], seed, |g, v| Ok(g.leaky_relu(v[0], 0.2)))));
    let x = distinct(&[2, 2, 4, 4], 0.01, &mut r);
    out.push(("maxpool2d", op_gradient_error(&[x], seed, |g, v| g.maxpool2d(v[0], 2, 2))));
    let x = uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut r);
    out.push(("avgpool2d", op_gradient_error(&[x], seed, |g, v| g.avgpool2d(v[0], 2))));

    let x = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let w = uniform(&[5, 4], -1.0, 1.0, &mut r);
    let b = uniform(&[5], -1.0, 1.0, &mut r);
    out.push(("linear", op_gradient_error(&[x, w, b], seed, |g, v| g.linear(v[0], v[1], v[2]))));

    let x = uniform(&[4, 6], -1.0, 1.0, &mut r);
    out.push((
        "dropout train",
        op_gradient_error(&[x], seed, |g, v| Ok(g.dropout(v[0], 0.3, Mode::Train, &mut rng(seed)))),
    ));

    let a = uniform(&[2, 3], -1.0, 1.0, &mut r);
    let c = uniform(&[2, 3], -1.0, 1.0, &mut r);
    out.push(("add", op_gradient_error(&[a.clone(), c.clone()], seed, |g, v| g.add(v[0], v[1]))));
    out.push(("mul", op_gradient_error(&[a.clone(), c], seed, |g, v| g.mul(v[0], v[1]))));
    out.push(("scale", op_gradient_error(&[a.clone()], seed, |g, v| Ok(g.scale(v[0], -1.7)))));
    out.push(("sum", op_gradient_error(&[a], seed, |g, v| Ok(g.sum(v[0])))));
    let x = uniform(&[2, 2, 2, 3], -1.0, 1.0, &mut r);
    out.push(("flatten", op_gradient_error(&[x], seed, |g, v| Ok(g.flatten(v[0])))));

    let logits = uniform(&[3, 5], -2.0, 2.0, &mut r);
    let labels: Vec<usize> = (0..3).map(|_| r.gen_range(0..5)).collect();
    out.push((
        "cross_entropy",
        op_gradient_error(&[logits], seed, |g, v| g.cross_entropy(v[0], &labels)),
    ));
    let p = away_from_zero(&[2, 3], 0.01, 1.0, &mut r);
    let q = away_from_zero(&[4], 0.01, 1.0, &mut r);
    out.push(("l1_penalty", op_gradient_error(&[p, q], seed, |g, v| Ok(g.l1_penalty(v, 0.5)))));
    out
}

/// A small multi-block model with a freshly inserted (linear-slope) unit and
/// non-trivial running statistics.
pub fn small_model(seed: u64) -> SecnnModel {
    let cfg = ModelConfig {
        image_size: 8,
        num_classes: 3,
        head_channels: 2,
        hidden_units: 4,
        ..ModelConfig::default()
    };
    let mut r = rng(seed);
    let mut m = SecnnModel::build_initial(2, 3, 3, cfg, &mut r).unwrap();
    m.insert_identity_unit(1, 0.05, &mut r).unwrap();
    scramble_running_stats(&mut m, seed);
    m
}

/// Full-model loss (mean cross-entropy plus L1) in the given mode; train mode
/// replays the same dropout masks for a fixed `seed`.
pub fn model_loss(model: &SecnnModel, batch: &Batch, mode: secnn::Mode, l1: f32, seed: u64) -> (f32, Vec<Tensor>) {
    let (value, grads, _) = model_loss_with_pattern(model, batch, mode, l1, seed);
    (value, grads)
}

pub fn model_loss_with_pattern(
    model: &SecnnModel,
    batch: &Batch,
    mode: secnn::Mode,
    l1: f32,
    seed: u64,
) -> (f32, Vec<Tensor>, Vec<usize>) {
    let mut m = model.clone();
    let mut g = Graph::new();
    let fw = m.forward(&mut g, batch.images.clone(), mode, &mut rng(seed)).unwrap();
    let ce = g.cross_entropy(fw.logits, &batch.labels).unwrap();
    let l1v = g.l1_penalty(&fw.params, l1);
    let loss = g.add(ce, l1v).unwrap();
    let value = g.value(loss).data()[0];
    let pattern = g.kink_pattern();
    let grads = g.backward(loss).unwrap();
    let per_param = fw.params.iter().map(|v| grads.get(*v).unwrap().clone()).collect();
    (value, per_param, pattern)
}

/// Outcome of the full-model gradient check.
#[derive(Clone, Copy, Debug)]
pub struct ModelGradientCheck {
    /// Worst per-tensor relative error over the entries that were checked.
    pub worst: f64,
    /// Entries whose two evaluations `θ ± h` straddled a kink (different
    /// LeakyReLU sign, max-pool winner or L1 sign); a central difference
    /// there does not estimate the derivative, so they are left out.
    pub kinked: usize,
    pub total: usize,
}

/// Compares the backprop gradient of the full model loss with element-wise
/// central differences, one parameter at a time.
pub fn model_gradient_check(seed: u64, mode: secnn::Mode) -> ModelGradientCheck {
    let model = small_model(seed);
    let batch = random_batch(2, 3, 8, 3, seed + 100);
    let l1 = 1e-3;
    let (_, grads) = model_loss(&model, &batch, mode, l1, seed);
    let base = model.flat_params();
    let eval_at = |flat: &[f32]| {
        let mut m = model.clone();
        m.set_flat_params(flat).unwrap();
        let (v, _, pattern) = model_loss_with_pattern(&m, &batch, mode, l1, seed);
        (v as f64, pattern)
    };
    let mut worst = 0.0f64;
    let mut kinked = 0;
    let mut offset = 0;
    for t in &grads {
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for (k, j) in (offset..offset + t.numel()).enumerate() {
            let mut p = base.clone();
            p[j] += FD_STEP;
            let (up, pat_up) = eval_at(&p);
            p[j] = base[j] - FD_STEP;
            let (down, pat_down) = eval_at(&p);
            if pat_up != pat_down {
                kinked += 1;
                continue;
            }
            analytic.push(t.data()[k] as f64);
            numeric.push((up - down) / (2.0 * FD_STEP as f64));
        }
        worst = worst.max(tensor_rel_err(&analytic, &numeric));
        offset += t.numel();
    }
    ModelGradientCheck {
        worst,
        kinked,
        total: base.len(),
    }
}

/// The initial 3-block, 16-channel CIFAR-shaped model with random running
/// statistics.
pub fn cifar_model(seed: u64) -> SecnnModel {
    let mut m = SecnnModel::build_initial(3, 16, 10, ModelConfig::default(), &mut rng(seed)).unwrap();
    scramble_running_stats(&mut m, seed ^ 0xBEEF);
    m
}

/// Parameter count of a descriptor by closed form, without building a model.
pub fn closed_form_param_count(desc: &secnn::ArchitectureDescriptor) -> usize {
    let cfg = &desc.config;
    let mut total = 0;
    let mut cin = cfg.image_channels;
    for b in &desc.blocks {
        let c = b.out_channels;
        total += c * cin * 9 + 3 * c;
        total += (b.units - 1) * (c * c * 9 + 3 * c);
        cin = c;
    }
    let (first, last) = (desc.blocks[0].out_channels, cin);
    let side = cfg.image_size >> desc.blocks.len();
    total += last * first + last;
    total += cfg.head_channels * last + cfg.head_channels;
    total += cfg.hidden_units * cfg.head_channels * side * side + cfg.hidden_units;
    total += cfg.num_classes * cfg.hidden_units + cfg.num_classes;
    total
}

/// Eval-mode logit deviation caused by a zero-noise identity insertion and by
/// a zero-noise widening of one randomly chosen block, for one case.
pub fn preservation_case(seed: u64) -> (usize, f32, f32) {
    let mut r = rng(seed);
    let model = cifar_model(seed);
    let block = r.gen_range(0..model.num_blocks());
    let x = uniform(&[4, 3, 32, 32], -2.0, 2.0, &mut r);
    let reference = model.predict(&x, 4).unwrap();

    let mut deeper = model.clone();
    deeper.insert_identity_unit(block, 0.0, &mut r).unwrap();
    let mut wider = model.clone();
    wider.widen_block(block, 4, 0.0, &mut r).unwrap();
    (
        block,
        logit_rel_dev(&reference, &deeper.predict(&x, 4).unwrap()),
        logit_rel_dev(&reference, &wider.predict(&x, 4).unwrap()),
    )
}

/// Tolerance on eval-mode logit changes caused by a zero-noise mutation.
pub const PRESERVATION_REL_TOL: f32 = 1e-4;

/// Small 8×8 model used by the training tests.
pub fn quick_model(seed: u64, classes: usize) -> SecnnModel {
    let cfg = ModelConfig {
        image_size: 8,
        num_classes: classes,
        head_channels: 2,
        hidden_units: 8,
        ..ModelConfig::default()
    };
    SecnnModel::build_initial(2, 4, 4, cfg, &mut rng(seed)).unwrap()
}

/// Training settings sized for tests; expansion uses the production rule.
pub fn quick_config(epochs: usize) -> secnn::trainer::TrainConfig {
    secnn::trainer::TrainConfig {
        epochs,
        batch_size: 16,
        eval_batch_size: 64,
        expansion: ExpansionConfig {
            score_batch_size: 32,
            ..ExpansionConfig::default()
        },
        ..secnn::trainer::TrainConfig::default()
    }
}

/// Epochs at which the model grew.
pub fn expansion_epochs(history: &[secnn::trainer::MetricsRecord]) -> Vec<usize> {
    history.iter().filter(|r| r.expanded()).map(|r| r.epoch).collect()
}

/// A fit with a near-one threshold so that expansions happen whenever the
/// cooldown allows; used to exercise the cooldown law.
pub fn eager_growth_history(seed: u64, epochs: usize, cooldown: usize) -> Vec<secnn::trainer::MetricsRecord> {
    let train = random_dataset(96, 3, 8, seed);
    let val = random_dataset(48, 3, 8, seed + 1);
    let mut model = quick_model(seed, 3);
    let mut config = quick_config(epochs);
    config.seed = seed;
    config.expansion.tau = 1.0001;
    config.expansion.cooldown_epochs = cooldown;
    let state = secnn::trainer::fit(&mut model, &train, &val, &config, &mut secnn::trainer::NoObserver).unwrap();
    state.history
}

/// One randomized decision problem.
pub struct Scenario {
    pub model: secnn::SecnnModel,
    pub batch: secnn::data::Batch,
    pub config: secnn::expansion::ExpansionConfig,
    pub l1: f32,
    pub seed: u64,
}

/// Toy models of one or two blocks. Every third scenario has a block at
/// capacity, every fifth forbids widening through a channel ceiling.
pub fn scenario(i: u64) -> Scenario {
    let blocks = 1 + (i % 2) as usize;
    let channels = 1 + (i % 3 == 1) as usize;
    let capacity = if i % 3 == 0 { 1 } else { 2 };
    let cfg = secnn::ModelConfig {
        max_channels: (i % 5 == 4).then_some(channels),
        ..toy_config()
    };
    let mut model = secnn::SecnnModel::build_initial(blocks, channels, capacity, cfg, &mut rng(i)).unwrap();
    scramble_running_stats(&mut model, i + 50);
    let batch = random_batch(4 + (i % 5) as usize, 3, 4, 2, i + 1000);
    Scenario {
        model,
        batch,
        config: secnn::expansion::ExpansionConfig::default(),
        l1: if i % 2 == 0 { 1e-5 } else { 0.0 },
        seed: i * 7919,
    }
}

/// Plain gradient descent on the score batch until the mean gradient nearly
/// vanishes. Near such a point the current score is small while an inserted
/// unit still sees coherent gradients, which is where adding a layer wins.
pub fn descend(model: &mut secnn::SecnnModel, batch: &secnn::data::Batch, steps: usize) {
    for _ in 0..steps {
        let g = secnn::expansion::mean_gradient(model, batch, 0.0).unwrap();
        let p: Vec<f32> = model.flat_params().iter().zip(&g).map(|(w, d)| w - 0.3 * d).collect();
        model.set_flat_params(&p).unwrap();
    }
}

/// Toy models trained to near-stationarity on 16 random samples; even
/// indices forbid widening.
pub fn stationary_scenario(i: u64) -> Scenario {
    let cfg = secnn::ModelConfig {
        max_channels: (i % 2 == 0).then_some(1),
        ..toy_config()
    };
    let mut model = secnn::SecnnModel::build_initial(1 + (i % 3 == 2) as usize, 1, 3, cfg, &mut rng(i)).unwrap();
    let batch = random_batch(16, 3, 4, 2, i + 77);
    descend(&mut model, &batch, 3000);
    Scenario {
        model,
        batch,
        config: secnn::expansion::ExpansionConfig::default(),
        l1: 0.0,
        seed: 1,
    }
}
