//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every differentiable operation executed through it.
//! [`Graph::backward`] replays the tape in reverse, producing gradients for
//! every node and, keyed by [`ParamId`], for every parameter leaf.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Stable identifier of a learnable tensor inside one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub u64);

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub id: ParamId,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(id: ParamId, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { id, value, grad }
    }

    pub fn zero_grad(&mut self) {
        if self.grad.shape() != self.value.shape() {
            self.grad = Tensor::zeros(self.value.shape());
        } else {
            self.grad.data_mut().fill(0.0);
        }
    }

    /// Replaces the value, resetting the gradient to the new shape.
    pub fn set_value(&mut self, value: Tensor) {
        self.grad = Tensor::zeros(value.shape());
        self.value = value;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Per-channel running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Exponential moving average toward the batch statistics.
    pub fn update(&mut self, batch: &BatchStats, momentum: f32) {
        for (m, b) in self.mean.iter_mut().zip(&batch.mean) {
            *m = (1.0 - momentum) * *m + momentum * b;
        }
        for (v, b) in self.var.iter_mut().zip(&batch.unbiased_var) {
            *v = (1.0 - momentum) * *v + momentum * b;
        }
    }
}

/// Statistics observed by a train-mode batch-norm forward.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub unbiased_var: Vec<f32>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        k: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Dropout {
        x: Var,
        mask: Vec<f32>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: f32,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
    L1 {
        inputs: Vec<Var>,
        coeff: f32,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> &HashMap<ParamId, Tensor> {
        &self.params
    }

    /// Adds the gradient of every matching parameter into its `grad` buffer.
    pub fn accumulate_into<'a>(&self, params: impl IntoIterator<Item = &'a mut Parameter>) {
        for p in params {
            if let Some(g) = self.params.get(&p.id) {
                if p.grad.shape() != p.value.shape() {
                    p.zero_grad();
                }
                p.grad.add_assign(g);
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(msg: String) -> Error {
    Error::InvalidShape(msg)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Records a constant input (no parameter identity).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a parameter leaf; its gradient is reported under `param.id`.
    pub fn param(&mut self, param: &Parameter) -> Var {
        let var = self.push(param.value.clone(), Op::Leaf);
        self.nodes[var.0].param = Some(param.id);
        var
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(w).dims4()?;
        if wcin != cin {
            return Err(shape_err(format!(
                "conv2d input has {cin} channels, weight expects {wcin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(shape_err(format!("conv2d kernel must be odd and square, got {kh}x{kw}")));
        }
        if self.value(b).shape() != [cout] {
            return Err(shape_err(format!(
                "conv2d bias shape {:?}, expected [{cout}]",
                self.value(b).shape()
            )));
        }
        if stride == 0 || h + 2 * padding < kh || wd + 2 * padding < kw {
            return Err(shape_err(format!(
                "conv2d window {kh} does not fit {h}x{wd} with padding {padding}"
            )));
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            k: kh,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (wd + 2 * padding - kw) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let value = Tensor::new(vec![n, cout, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }))
    }

    /// Batch normalization over `(N, H, W)` per channel. In train mode the
    /// observed batch statistics are returned so the caller can update its
    /// running estimates.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        mode: Mode,
        eps: f32,
    ) -> Result<(Var, Option<BatchStats>)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.value(gamma).shape() != [c]
            || self.value(beta).shape() != [c]
            || running.channels() != c
        {
            return Err(shape_err(format!("batchnorm parameters do not match {c} channels")));
        }
        let m = n * h * w;
        let plane = h * w;
        let xs = self.value(x).data();
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        let train = mode == Mode::Train;
        if train {
            if m < 2 {
                return Err(shape_err(format!(
                    "train-mode batchnorm needs at least 2 values per channel, got {m}"
                )));
            }
            for ni in 0..n {
                for ci in 0..c {
                    let s = &xs[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                    mean[ci] += s.iter().map(|&v| v as f64).sum::<f64>() as f32;
                }
            }
            mean.iter_mut().for_each(|v| *v /= m as f32);
            for ni in 0..n {
                for ci in 0..c {
                    let s = &xs[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                    var[ci] += s.iter().map(|&v| (v - mean[ci]) * (v - mean[ci])).sum::<f32>();
                }
            }
            var.iter_mut().for_each(|v| *v /= m as f32);
        } else {
            mean.copy_from_slice(&running.mean);
            var.copy_from_slice(&running.var);
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0f32; xs.len()];
        let mut out = vec![0.0f32; xs.len()];
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * plane;
                for i in off..off + plane {
                    let xh = (xs[i] - mean[ci]) * inv_std[ci];
                    xhat[i] = xh;
                    out[i] = g[ci] * xh + bt[ci];
                }
            }
        }
        let stats = train.then(|| BatchStats {
            unbiased_var: var.iter().map(|v| v * m as f32 / (m - 1) as f32).collect(),
            mean,
        });
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let var_out = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        );
        Ok((var_out, stats))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let value = {
            let t = self.value(x);
            let data = t
                .data()
                .iter()
                .map(|&v| if v >= 0.0 { v } else { slope * v })
                .collect();
            Tensor::new(t.shape().to_vec(), data).expect("same shape")
        };
        self.push(value, Op::LeakyRelu { x, slope })
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if k == 0 || stride == 0 || k > h || k > w {
            return Err(shape_err(format!("pool window {k} larger than input {h}x{w}")));
        }
        let (out, argmax, ho, wo) =
            kernels::maxpool_forward(self.value(x).data(), (n * c, h, w), k, stride);
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }))
    }

    /// Non-overlapping average pooling with window and stride `k`.
    pub fn avgpool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if k == 0 || k > h || k > w || h % k != 0 || w % k != 0 {
            return Err(shape_err(format!("average pool {k} does not tile {h}x{w}")));
        }
        if k == 1 {
            return Ok(x);
        }
        let out = kernels::avgpool_forward(self.value(x).data(), (n * c, h, w), k);
        let value = Tensor::new(vec![n, c, h / k, w / k], out)?;
        Ok(self.push(value, Op::AvgPool { x, k }))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        let (dout, wd) = self.value(w).dims2()?;
        if wd != d || self.value(b).shape() != [dout] {
            return Err(shape_err(format!(
                "linear input width {d} vs weight {:?} / bias {:?}",
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = Vec::with_capacity(n * dout);
        let bias = self.value(b).data();
        for _ in 0..n {
            out.extend_from_slice(bias);
        }
        kernels::gemm(
            n,
            d,
            dout,
            self.value(x).data(),
            (d, 1),
            self.value(w).data(),
            (1, d),
            1.0,
            &mut out,
        );
        let value = Tensor::new(vec![n, dout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    /// Inverted dropout. Eval mode, or a zero rate, returns `x` untouched.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f32, mode: Mode, rng: &mut R) -> Var {
        if mode == Mode::Eval || rate <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let mask: Vec<f32> = (0..t.numel())
            .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Dropout { x, mask })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(format!("add {:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(format!("mul {:?} * {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let mut value = self.value(x).clone();
        value.scale(factor);
        self.push(value, Op::Scale { x, factor })
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|&v| v as f64).sum();
        self.push(Tensor::scalar(total as f32), Op::Sum { x })
    }

    /// Collapses every axis after the first: `[N, ...] -> [N, rest]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.dim(0);
        let rest = t.numel() / n;
        let value = t.clone().reshape(&[n, rest]).expect("same numel");
        self.push(value, Op::Reshape { x })
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.value(logits).dims2()?;
        if labels.len() != n {
            return Err(shape_err(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidLabel { label, classes: k });
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0f32; n * k];
        let mut loss = 0.0f64;
        for (i, &label) in labels.iter().enumerate() {
            let row = &z[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let sum: f32 = row.iter().map(|v| (v - max).exp()).sum();
            let log_sum = sum.ln() + max;
            for j in 0..k {
                probs[i * k + j] = (row[j] - log_sum).exp();
            }
            loss += (log_sum - row[label]) as f64;
        }
        let value = Tensor::scalar((loss / n as f64) as f32);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    /// `coeff · Σ|θ|` over every element of every input.
    pub fn l1_penalty(&mut self, inputs: &[Var], coeff: f32) -> Var {
        let total: f64 = inputs
            .iter()
            .map(|&v| self.value(v).data().iter().map(|x| x.abs() as f64).sum::<f64>())
            .sum();
        let value = Tensor::scalar((coeff as f64 * total) as f32);
        self.push(
            value,
            Op::L1 {
                inputs: inputs.to_vec(),
                coeff,
            },
        )
    }

    /// Which branch every piecewise-linear op took: the sign of each
    /// LeakyReLU and L1 input and the winner of each max-pool window. Two
    /// evaluations with equal patterns lie on the same linear piece.
    pub fn kink_pattern(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu { x, .. } => {
                    out.extend(self.value(*x).data().iter().map(|&v| (v >= 0.0) as usize));
                }
                Op::MaxPool { argmax, .. } => out.extend_from_slice(argmax),
                Op::L1 { inputs, .. } => {
                    for v in inputs {
                        out.extend(self.value(*v).data().iter().map(|&x| (x > 0.0) as usize + (x < 0.0) as usize * 2));
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Reverse pass from a scalar `loss`. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(shape_err(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backward_node(idx, &dy, &mut grads)?;
            grads[idx] = Some(dy);
        }

        let mut params = HashMap::new();
        for (idx, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if let (Some(id), Some(g)) = (node.param, grads[idx].as_ref()) {
                params
                    .entry(id)
                    .and_modify(|acc: &mut Tensor| acc.add_assign(g))
                    .or_insert_with(|| g.clone());
            }
        }
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backward_node(&self, idx: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let dyd = dy.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    dyd,
                    geom,
                );
                accumulate(grads, *x, self.value(*x).shape(), dx);
                accumulate(grads, *w, self.value(*w).shape(), dw);
                accumulate(grads, *b, self.value(*b).shape(), db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let plane = h * w;
                let m = (n * plane) as f32;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * plane;
                        for i in off..off + plane {
                            dbeta[ci] += dyd[i];
                            dgamma[ci] += dyd[i] * xhat[i];
                        }
                    }
                }
                let mut dx = vec![0.0f32; dyd.len()];
                for ni in 0..n {
                    for ci in 0..c {
                        let off = (ni * c + ci) * plane;
                        let scale = g[ci] * inv_std[ci];
                        for i in off..off + plane {
                            dx[i] = if *train {
                                scale * (dyd[i] - dbeta[ci] / m - xhat[i] * dgamma[ci] / m)
                            } else {
                                scale * dyd[i]
                            };
                        }
                    }
                }
                accumulate(grads, *x, &[n, c, h, w], dx);
                accumulate(grads, *gamma, &[c], dgamma);
                accumulate(grads, *beta, &[c], dbeta);
            }
            Op::LeakyRelu { x, slope } => {
                let xs = self.value(*x).data();
                let dx = xs
                    .iter()
                    .zip(dyd)
                    .map(|(&v, &d)| if v >= 0.0 { d } else { slope * d })
                    .collect();
                accumulate(grads, *x, self.value(*x).shape(), dx);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![0.0f32; self.value(*x).numel()];
                for (&src, &d) in argmax.iter().zip(dyd) {
                    dx[src] += d;
                }
                accumulate(grads, *x, self.value(*x).shape(), dx);
            }
            Op::AvgPool { x, k } => {
                let (n, c, h, w) = self.value(*x).dims4()?;
                let dx = kernels::avgpool_backward(dyd, (n * c, h, w), *k);
                accumulate(grads, *x, &[n, c, h, w], dx);
            }
            Op::Linear { x, w, b } => {
                let (n, d) = self.value(*x).dims2()?;
                let (dout, _) = self.value(*w).dims2()?;
                let mut dx = vec![0.0f32; n * d];
                kernels::gemm(n, dout, d, dyd, (dout, 1), self.value(*w).data(), (d, 1), 0.0, &mut dx);
                let mut dw = vec![0.0f32; dout * d];
                kernels::gemm(dout, n, d, dyd, (1, dout), self.value(*x).data(), (d, 1), 0.0, &mut dw);
                let mut db = vec![0.0f32; dout];
                for row in dyd.chunks(dout) {
                    db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                accumulate(grads, *x, &[n, d], dx);
                accumulate(grads, *w, &[dout, d], dw);
                accumulate(grads, *b, &[dout], db);
            }
            Op::Dropout { x, mask } => {
                let dx = dyd.iter().zip(mask).map(|(d, m)| d * m).collect();
                accumulate(grads, *x, dy.shape(), dx);
            }
            Op::Add { a, b } => {
                accumulate(grads, *a, dy.shape(), dyd.to_vec());
                accumulate(grads, *b, dy.shape(), dyd.to_vec());
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = dyd.iter().zip(vb).map(|(d, y)| d * y).collect();
                let db = dyd.iter().zip(va).map(|(d, x)| d * x).collect();
                accumulate(grads, *a, dy.shape(), da);
                accumulate(grads, *b, dy.shape(), db);
            }
            Op::Scale { x, factor } => {
                let dx = dyd.iter().map(|d| d * factor).collect();
                accumulate(grads, *x, dy.shape(), dx);
            }
            Op::Sum { x } => {
                let t = self.value(*x);
                accumulate(grads, *x, t.shape(), vec![dyd[0]; t.numel()]);
            }
            Op::Reshape { x } => {
                accumulate(grads, *x, self.value(*x).shape(), dyd.to_vec());
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (n, k) = self.value(*logits).dims2()?;
                let scale = dyd[0] / n as f32;
                let mut dz: Vec<f32> = probs.iter().map(|p| p * scale).collect();
                for (i, &label) in labels.iter().enumerate() {
                    dz[i * k + label] -= scale;
                }
                accumulate(grads, *logits, &[n, k], dz);
            }
            Op::L1 { inputs, coeff } => {
                let scale = dyd[0] * coeff;
                for &v in inputs {
                    let dx = self
                        .value(v)
                        .data()
                        .iter()
                        .map(|&x| {
                            if x > 0.0 {
                                scale
                            } else if x < 0.0 {
                                -scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(grads, v, self.value(v).shape(), dx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, shape: &[usize], data: Vec<f32>) {
    match &mut grads[var.0] {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(&data)
            .for_each(|(a, b)| *a += b),
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape"));
        }
    }
}
