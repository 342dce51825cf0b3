//! First-order optimizers over [`Parameter`]s, keyed by [`ParamId`].
//!
//! Adam moments follow their parameter when it grows: the stored moments are
//! embedded in the leading corner of the new shape and the new entries start
//! at zero, so existing weights keep their history and new ones start fresh.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autograd::{ParamId, Parameter};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f32, beta2: f32, eps: f32 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    steps: u64,
    moments: HashMap<ParamId, (Tensor, Tensor)>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            steps: 0,
            moments: HashMap::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Drops moments of parameters no longer owned by the model.
    pub fn retain<'a>(&mut self, live: impl IntoIterator<Item = &'a Parameter>) {
        let ids: std::collections::HashSet<ParamId> = live.into_iter().map(|p| p.id).collect();
        self.moments.retain(|id, _| ids.contains(id));
    }

    /// Applies one update using each parameter's accumulated `grad`.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter>, lr: f32) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params {
                    for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for p in params {
                    let shape = p.value.shape().to_vec();
                    let entry = self
                        .moments
                        .entry(p.id)
                        .or_insert_with(|| (Tensor::zeros(&shape), Tensor::zeros(&shape)));
                    if entry.0.shape() != shape.as_slice() {
                        entry.0 = entry.0.embed_corner(&shape);
                        entry.1 = entry.1.embed_corner(&shape);
                    }
                    let (m, v) = entry;
                    let grads = p.grad.data();
                    for (((w, g), mi), vi) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(grads)
                        .zip(m.data_mut().iter_mut())
                        .zip(v.data_mut().iter_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
