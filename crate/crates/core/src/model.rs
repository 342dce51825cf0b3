//! The expandable block-based CNN.
//!
//! Layout: `blocks[0] -> pool -> blocks[1] -> pool -> ... -> blocks[B-1]
//! (+ skip) -> pool -> head`. Every block is a stack of 3×3 conv units
//! (conv → batch-norm → LeakyReLU → dropout). The skip path average-pools the
//! output of block 0 down to the resolution of the last block and projects it
//! with a 1×1 convolution before the element-wise add. The head is a 1×1 conv
//! with LeakyReLU, a hidden fully connected layer and the class logits.
//!
//! Both mutations ([`SecnnModel::insert_identity_unit`] and
//! [`SecnnModel::widen_block`]) are function preserving in eval mode when
//! their noise scale is zero.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autograd::{BatchStats, Graph, Mode, ParamId, Parameter, RunningStats, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyper-parameters fixed at construction time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_channels: usize,
    pub image_size: usize,
    pub num_classes: usize,
    pub head_channels: usize,
    pub hidden_units: usize,
    pub leaky_slope: f32,
    pub dropout_conv: f32,
    pub dropout_fc: f32,
    pub bn_eps: f32,
    pub bn_momentum: f32,
    /// Upper bound on a block's channel count; `None` means unbounded.
    pub max_channels: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            image_size: 32,
            num_classes: 10,
            head_channels: 8,
            hidden_units: 20,
            leaky_slope: 0.2,
            dropout_conv: 0.1,
            dropout_fc: 0.05,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            max_channels: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvUnit {
    pub weight: Parameter,
    pub bias: Parameter,
    pub gamma: Parameter,
    pub beta: Parameter,
    pub running: RunningStats,
    /// Negative slope of this unit's activation. Freshly inserted units start
    /// at 1.0 (a linear pass-through) and are annealed toward the model slope.
    pub slope: f32,
}

impl ConvUnit {
    pub fn in_channels(&self) -> usize {
        self.weight.value.dim(1)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub units: Vec<ConvUnit>,
    pub out_channels: usize,
    pub capacity: usize,
}

impl ConvBlock {
    pub fn is_full(&self) -> bool {
        self.units.len() >= self.capacity
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDescriptor {
    pub units: usize,
    pub out_channels: usize,
    pub capacity: usize,
    pub slopes: Vec<f32>,
}

/// Structural summary of a model, sufficient to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub config: ModelConfig,
    pub blocks: Vec<BlockDescriptor>,
    pub total_params: usize,
}

/// Outcome of a structural mutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MutationReport {
    pub delta_p: usize,
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Parameter leaves in walker order.
    pub params: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecnnModel {
    config: ModelConfig,
    blocks: Vec<ConvBlock>,
    skip_weight: Parameter,
    skip_bias: Parameter,
    head_weight: Parameter,
    head_bias: Parameter,
    fc1_weight: Parameter,
    fc1_bias: Parameter,
    fc2_weight: Parameter,
    fc2_bias: Parameter,
    next_id: u64,
}

fn kaiming_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, slope: f32, rng: &mut R) -> Tensor {
    let gain = (2.0 / (1.0 + slope * slope)).sqrt();
    let bound = gain * (3.0 / fan_in as f32).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Grows `old` into `shape`: old entries kept in the leading corner, every new
/// entry drawn as `coeff · N(0, 1)`.
fn grow_with_noise<R: Rng + ?Sized>(old: &Tensor, shape: &[usize], coeff: f32, rng: &mut R) -> Tensor {
    let mut out = old.embed_corner(shape);
    if coeff == 0.0 {
        return out;
    }
    let noise = Tensor::from_fn(shape, |_| coeff * { let z: f64 = StandardNormal.sample(rng); z as f32 });
    let mask = Tensor::full(old.shape(), 1.0).embed_corner(shape);
    for ((o, n), m) in out.data_mut().iter_mut().zip(noise.data()).zip(mask.data()) {
        if *m == 0.0 {
            *o = *n;
        }
    }
    out
}

fn grow_with_value(old: &Tensor, shape: &[usize], value: f32) -> Tensor {
    let mut out = old.embed_corner(shape);
    let mask = Tensor::full(old.shape(), 1.0).embed_corner(shape);
    for (o, m) in out.data_mut().iter_mut().zip(mask.data()) {
        if *m == 0.0 {
            *o = value;
        }
    }
    out
}

impl SecnnModel {
    /// Builds a model with `num_blocks` single-unit blocks of `channels` each.
    pub fn build_initial<R: Rng + ?Sized>(
        num_blocks: usize,
        channels: usize,
        capacity: usize,
        config: ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..num_blocks)
            .map(|_| BlockDescriptor {
                units: 1,
                out_channels: channels,
                capacity,
                slopes: vec![config.leaky_slope],
            })
            .collect();
        let desc = ArchitectureDescriptor {
            config,
            blocks,
            total_params: 0,
        };
        Self::from_descriptor(&desc, rng)
    }

    /// Builds a freshly initialized model with the structure of `desc`.
    /// `desc.total_params` is not consulted.
    pub fn from_descriptor<R: Rng + ?Sized>(desc: &ArchitectureDescriptor, rng: &mut R) -> Result<Self> {
        let cfg = desc.config.clone();
        let nb = desc.blocks.len();
        if nb == 0 {
            return Err(Error::Config("a model needs at least one block".into()));
        }
        if cfg.image_channels == 0 || cfg.num_classes == 0 || cfg.head_channels == 0 || cfg.hidden_units == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        let factor = 1usize << nb;
        if cfg.image_size % factor != 0 {
            return Err(Error::Config(format!(
                "image size {} is not divisible by 2^{nb}",
                cfg.image_size
            )));
        }
        let mut next_id = 0u64;
        let mut new_param = |value: Tensor| {
            let p = Parameter::new(ParamId(next_id), value);
            next_id += 1;
            p
        };
        let slope = cfg.leaky_slope;
        let mut blocks = Vec::with_capacity(nb);
        let mut cin = cfg.image_channels;
        for bd in &desc.blocks {
            if bd.units == 0 || bd.out_channels == 0 || bd.units > bd.capacity {
                return Err(Error::Config(format!("invalid block descriptor {bd:?}")));
            }
            if bd.slopes.len() != bd.units {
                return Err(Error::Config("one activation slope per unit required".into()));
            }
            let c = bd.out_channels;
            let mut units = Vec::with_capacity(bd.units);
            for (u, &unit_slope) in bd.slopes.iter().enumerate() {
                let unit_cin = if u == 0 { cin } else { c };
                units.push(ConvUnit {
                    weight: new_param(kaiming_uniform(&[c, unit_cin, 3, 3], unit_cin * 9, slope, rng)),
                    bias: new_param(Tensor::zeros(&[c])),
                    gamma: new_param(Tensor::full(&[c], 1.0)),
                    beta: new_param(Tensor::zeros(&[c])),
                    running: RunningStats::identity(c),
                    slope: unit_slope,
                });
            }
            blocks.push(ConvBlock {
                units,
                out_channels: c,
                capacity: bd.capacity,
            });
            cin = c;
        }
        let c_first = desc.blocks[0].out_channels;
        let c_last = desc.blocks[nb - 1].out_channels;
        let final_side = cfg.image_size / factor;
        let flat = cfg.head_channels * final_side * final_side;
        let skip_weight = new_param(kaiming_uniform(&[c_last, c_first, 1, 1], c_first, slope, rng));
        let skip_bias = new_param(Tensor::zeros(&[c_last]));
        let head_weight = new_param(kaiming_uniform(&[cfg.head_channels, c_last, 1, 1], c_last, slope, rng));
        let head_bias = new_param(Tensor::zeros(&[cfg.head_channels]));
        let fc1_weight = new_param(kaiming_uniform(&[cfg.hidden_units, flat], flat, slope, rng));
        let fc1_bias = new_param(Tensor::zeros(&[cfg.hidden_units]));
        let fc2_weight = new_param(kaiming_uniform(
            &[cfg.num_classes, cfg.hidden_units],
            cfg.hidden_units,
            slope,
            rng,
        ));
        let fc2_bias = new_param(Tensor::zeros(&[cfg.num_classes]));
        Ok(Self {
            config: cfg,
            blocks,
            skip_weight,
            skip_bias,
            head_weight,
            head_bias,
            fc1_weight,
            fc1_bias,
            fc2_weight,
            fc2_bias,
            next_id,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[ConvBlock] {
        &self.blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn total_units(&self) -> usize {
        self.blocks.iter().map(|b| b.units.len()).sum()
    }

    pub fn describe(&self) -> ArchitectureDescriptor {
        ArchitectureDescriptor {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockDescriptor {
                    units: b.units.len(),
                    out_channels: b.out_channels,
                    capacity: b.capacity,
                    slopes: b.units.iter().map(|u| u.slope).collect(),
                })
                .collect(),
            total_params: self.param_count(),
        }
    }

    /// Every learnable tensor in canonical walker order.
    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = Vec::new();
        for block in &self.blocks {
            for u in &block.units {
                out.extend([&u.weight, &u.bias, &u.gamma, &u.beta]);
            }
        }
        out.extend([
            &self.skip_weight,
            &self.skip_bias,
            &self.head_weight,
            &self.head_bias,
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
        ]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            for u in &mut block.units {
                out.extend([&mut u.weight, &mut u.bias, &mut u.gamma, &mut u.beta]);
            }
        }
        out.extend([
            &mut self.skip_weight,
            &mut self.skip_bias,
            &mut self.head_weight,
            &mut self.head_bias,
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]);
        out
    }

    /// Dotted names of [`Self::parameters`], in the same order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for u in 0..block.units.len() {
                for leaf in ["conv.weight", "conv.bias", "bn.gamma", "bn.beta"] {
                    out.push(format!("blocks.{b}.units.{u}.{leaf}"));
                }
            }
        }
        for name in [
            "skip.weight",
            "skip.bias",
            "head.conv.weight",
            "head.conv.bias",
            "head.fc1.weight",
            "head.fc1.bias",
            "head.fc2.weight",
            "head.fc2.bias",
        ] {
            out.push(name.to_string());
        }
        out
    }

    /// Replaces the dropout rates used by train-mode forward passes.
    pub fn set_dropout(&mut self, conv: f32, fc: f32) {
        self.config.dropout_conv = conv;
        self.config.dropout_fc = fc;
    }

    /// Batch-norm running statistics in walker order.
    pub fn running_stats(&self) -> Vec<&RunningStats> {
        self.blocks
            .iter()
            .flat_map(|b| b.units.iter().map(|u| &u.running))
            .collect()
    }

    pub fn running_stats_mut(&mut self) -> Vec<&mut RunningStats> {
        self.blocks
            .iter_mut()
            .flat_map(|b| b.units.iter_mut().map(|u| &mut u.running))
            .collect()
    }

    /// Number of scalar learnable parameters (running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.numel()).sum()
    }

    /// Number of scalar running-statistic entries (mean and variance).
    pub fn running_stat_count(&self) -> usize {
        self.running_stats().iter().map(|r| 2 * r.channels()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.parameters_mut().into_iter().for_each(Parameter::zero_grad);
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let (_, c, h, w) = input.dims4()?;
        let cfg = &self.config;
        if c != cfg.image_channels || h != cfg.image_size || w != cfg.image_size {
            return Err(Error::InvalidShape(format!(
                "model expects [N, {}, {}, {}], got {:?}",
                cfg.image_channels,
                cfg.image_size,
                cfg.image_size,
                input.shape()
            )));
        }
        Ok(())
    }

    fn forward_impl<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        input: Tensor,
        mode: Mode,
        rng: &mut R,
        mut batch_stats: Option<&mut Vec<BatchStats>>,
    ) -> Result<ForwardOutput> {
        self.check_input(&input)?;
        let cfg = &self.config;
        let mut params = Vec::new();
        let leaf = |g: &mut Graph, p: &Parameter, params: &mut Vec<Var>| {
            let v = g.param(p);
            params.push(v);
            v
        };
        let last = self.blocks.len() - 1;
        let mut h = g.input(input);
        let mut skip_source = None;
        for (bi, block) in self.blocks.iter().enumerate() {
            for u in &block.units {
                let w = leaf(g, &u.weight, &mut params);
                let b = leaf(g, &u.bias, &mut params);
                let gamma = leaf(g, &u.gamma, &mut params);
                let beta = leaf(g, &u.beta, &mut params);
                h = g.conv2d(h, w, b, 1, 1)?;
                let (normed, stats) = g.batchnorm2d(h, gamma, beta, &u.running, mode, cfg.bn_eps)?;
                if let (Some(sink), Some(stats)) = (batch_stats.as_deref_mut(), stats) {
                    sink.push(stats);
                }
                h = g.leaky_relu(normed, u.slope);
                h = g.dropout(h, cfg.dropout_conv, mode, rng);
            }
            if bi == 0 {
                skip_source = Some(h);
            }
            if bi == last {
                let src = skip_source.expect("block 0 visited first");
                let pooled = g.avgpool2d(src, 1 << last)?;
                let sw = leaf(g, &self.skip_weight, &mut params);
                let sb = leaf(g, &self.skip_bias, &mut params);
                let projected = g.conv2d(pooled, sw, sb, 1, 0)?;
                h = g.add(h, projected)?;
            }
            h = g.maxpool2d(h, 2, 2)?;
        }
        let hw = leaf(g, &self.head_weight, &mut params);
        let hb = leaf(g, &self.head_bias, &mut params);
        h = g.conv2d(h, hw, hb, 1, 0)?;
        h = g.leaky_relu(h, cfg.leaky_slope);
        h = g.flatten(h);
        let w1 = leaf(g, &self.fc1_weight, &mut params);
        let b1 = leaf(g, &self.fc1_bias, &mut params);
        h = g.linear(h, w1, b1)?;
        h = g.leaky_relu(h, cfg.leaky_slope);
        h = g.dropout(h, cfg.dropout_fc, mode, rng);
        let w2 = leaf(g, &self.fc2_weight, &mut params);
        let b2 = leaf(g, &self.fc2_bias, &mut params);
        let logits = g.linear(h, w2, b2)?;
        Ok(ForwardOutput { logits, params })
    }

    /// Forward pass recorded on `g`. Train mode uses batch statistics,
    /// applies dropout, and updates the running statistics afterwards.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph,
        input: Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        match mode {
            Mode::Eval => self.forward_eval(g, input),
            Mode::Train => {
                let mut stats = Vec::new();
                let out = self.forward_impl(g, input, mode, rng, Some(&mut stats))?;
                let momentum = self.config.bn_momentum;
                for (running, batch) in self.running_stats_mut().into_iter().zip(&stats) {
                    running.update(batch, momentum);
                }
                Ok(out)
            }
        }
    }

    /// Deterministic eval-mode forward; never mutates the model.
    pub fn forward_eval(&self, g: &mut Graph, input: Tensor) -> Result<ForwardOutput> {
        // Eval mode never draws from the generator.
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        self.forward_impl(g, input, Mode::Eval, &mut unused, None)
    }

    /// Eval-mode logits for `input`, evaluated in chunks of `chunk` samples.
    pub fn predict(&self, input: &Tensor, chunk: usize) -> Result<Tensor> {
        self.check_input(input)?;
        let (n, c, h, w) = input.dims4()?;
        let per = c * h * w;
        let k = self.config.num_classes;
        let mut out = Vec::with_capacity(n * k);
        let chunk = chunk.max(1);
        for start in (0..n).step_by(chunk) {
            let end = (start + chunk).min(n);
            let part = Tensor::new(
                vec![end - start, c, h, w],
                input.data()[start * per..end * per].to_vec(),
            )?;
            let mut g = Graph::new();
            let fw = self.forward_eval(&mut g, part)?;
            out.extend_from_slice(g.value(fw.logits).data());
        }
        Tensor::new(vec![n, k], out)
    }

    fn fresh_id(&mut self) -> ParamId {
        let id = ParamId(self.next_id);
        self.next_id += 1;
        id
    }

    fn check_block(&self, block_idx: usize) -> Result<()> {
        if block_idx >= self.blocks.len() {
            return Err(Error::InvalidBlock {
                index: block_idx,
                blocks: self.blocks.len(),
            });
        }
        Ok(())
    }

    /// Appends a conv unit initialized to the identity map (Dirac kernel plus
    /// `N(0, noise_std²)` noise, identity batch-norm, linear activation).
    pub fn insert_identity_unit<R: Rng + ?Sized>(
        &mut self,
        block_idx: usize,
        noise_std: f32,
        rng: &mut R,
    ) -> Result<MutationReport> {
        self.check_block(block_idx)?;
        let block = &self.blocks[block_idx];
        if block.is_full() {
            return Err(Error::CapacityExceeded {
                block: block_idx,
                capacity: block.capacity,
            });
        }
        let before = self.param_count();
        let c = block.out_channels;
        let mut kernel = Tensor::zeros(&[c, c, 3, 3]);
        {
            let data = kernel.data_mut();
            for o in 0..c {
                data[((o * c + o) * 3 + 1) * 3 + 1] = 1.0;
            }
            if noise_std != 0.0 {
                for v in data.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += noise_std * z as f32;
                }
            }
        }
        let unit = ConvUnit {
            weight: Parameter::new(self.fresh_id(), kernel),
            bias: Parameter::new(self.fresh_id(), Tensor::zeros(&[c])),
            gamma: Parameter::new(self.fresh_id(), Tensor::full(&[c], 1.0)),
            beta: Parameter::new(self.fresh_id(), Tensor::zeros(&[c])),
            running: RunningStats::identity(c),
            slope: 1.0,
        };
        self.blocks[block_idx].units.push(unit);
        Ok(MutationReport {
            delta_p: self.param_count() - before,
        })
    }

    /// Adds `extra` output channels to every unit of a block and the matching
    /// input channels to every consumer. New weights are `noise_coeff · N(0, 1)`;
    /// new biases are zero and new batch-norm channels start as identity.
    pub fn widen_block<R: Rng + ?Sized>(
        &mut self,
        block_idx: usize,
        extra: usize,
        noise_coeff: f32,
        rng: &mut R,
    ) -> Result<MutationReport> {
        self.check_block(block_idx)?;
        if extra == 0 {
            return Err(Error::Config("channel increment must be positive".into()));
        }
        let old_c = self.blocks[block_idx].out_channels;
        let new_c = old_c + extra;
        if let Some(ceiling) = self.config.max_channels {
            if new_c > ceiling {
                return Err(Error::Config(format!(
                    "widening block {block_idx} to {new_c} exceeds the channel ceiling {ceiling}"
                )));
            }
        }
        let before = self.param_count();
        let last = self.blocks.len() - 1;

        for (ui, u) in self.blocks[block_idx].units.iter_mut().enumerate() {
            let cin = if ui == 0 { u.in_channels() } else { new_c };
            let w = grow_with_noise(&u.weight.value, &[new_c, cin, 3, 3], noise_coeff, rng);
            u.weight.set_value(w);
            u.bias.set_value(u.bias.value.embed_corner(&[new_c]));
            u.gamma.set_value(grow_with_value(&u.gamma.value, &[new_c], 1.0));
            u.beta.set_value(u.beta.value.embed_corner(&[new_c]));
            u.running.mean.resize(new_c, 0.0);
            u.running.var.resize(new_c, 1.0);
        }
        self.blocks[block_idx].out_channels = new_c;

        if block_idx < last {
            let next = &mut self.blocks[block_idx + 1].units[0];
            let cout = next.out_channels();
            let w = grow_with_noise(&next.weight.value, &[cout, new_c, 3, 3], noise_coeff, rng);
            next.weight.set_value(w);
        }
        let c_first = self.blocks[0].out_channels;
        let c_last = self.blocks[last].out_channels;
        if block_idx == 0 || block_idx == last {
            let w = grow_with_noise(&self.skip_weight.value, &[c_last, c_first, 1, 1], noise_coeff, rng);
            self.skip_weight.set_value(w);
            self.skip_bias.set_value(self.skip_bias.value.embed_corner(&[c_last]));
        }
        if block_idx == last {
            let hc = self.config.head_channels;
            let w = grow_with_noise(&self.head_weight.value, &[hc, c_last, 1, 1], noise_coeff, rng);
            self.head_weight.set_value(w);
        }
        Ok(MutationReport {
            delta_p: self.param_count() - before,
        })
    }

    /// Moves every unit slope toward the model slope by at most `step`.
    pub fn anneal_slopes(&mut self, step: f32) {
        let target = self.config.leaky_slope;
        for u in self.blocks.iter_mut().flat_map(|b| b.units.iter_mut()) {
            if u.slope > target {
                u.slope = (u.slope - step).max(target);
            }
        }
    }

    /// Flat copy of all parameter values in walker order.
    pub fn flat_params(&self) -> Vec<f32> {
        self.parameters()
            .iter()
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    /// Overwrites all parameter values from a walker-ordered flat slice.
    pub fn set_flat_params(&mut self, flat: &[f32]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::LengthMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for p in self.parameters_mut() {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Walker-ordered flat copy of every parameter's `grad`.
    pub fn flat_grads(&self) -> Vec<f32> {
        self.parameters()
            .iter()
            .flat_map(|p| p.grad.data().iter().copied())
            .collect()
    }
}
