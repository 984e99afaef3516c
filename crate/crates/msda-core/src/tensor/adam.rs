//! Named parameters with persistent Adam state.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// One named parameter and its optimizer moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Ordered, name-unique parameter collection.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter; names must be unique within the set.
    pub fn register(&mut self, name: &str, value: Tensor) -> Result<usize> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidArgument {
                what: "parameter name",
                msg: format!("duplicate name {name}"),
            });
        }
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.params.push(Param {
            name: name.to_string(),
            value,
            m,
            v,
        });
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.params[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.params[i].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Insert every parameter as a gradient-requiring leaf, in order.
    pub fn insert_leaves(&self, g: &mut Graph) -> Vec<NodeId> {
        self.params
            .iter()
            .map(|p| g.leaf(p.value.clone(), true))
            .collect()
    }

    /// Collect gradients for the given leaf ids (zeros where absent).
    pub fn collect_grads(&self, g: &Graph, ids: &[NodeId]) -> Vec<Tensor> {
        ids.iter()
            .enumerate()
            .map(|(i, &id)| {
                g.grad(id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.params[i].value.shape()))
            })
            .collect()
    }

    /// Sum of squared parameter entries (L2 regularizer value).
    pub fn sum_sq(&self) -> f64 {
        self.params.iter().map(|p| p.value.sum_sq()).sum()
    }

    /// One bias-corrected Adam update over all parameters.
    pub fn adam_step(&mut self, grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if cfg.lr <= 0.0 {
            return Err(Error::InvalidArgument {
                what: "learning rate",
                msg: format!("must be positive, got {}", cfg.lr),
            });
        }
        if grads.len() != self.params.len() {
            return Err(Error::BadLength {
                what: "gradients",
                got: grads.len(),
                expected: self.params.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (p, g) in self.params.iter_mut().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let gm = g.data();
            let (mv, vv, wv) = (p.m.data_mut(), p.v.data_mut(), p.value.data_mut());
            for i in 0..gm.len() {
                mv[i] = cfg.beta1 * mv[i] + (1.0 - cfg.beta1) * gm[i];
                vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * gm[i] * gm[i];
                let m_hat = mv[i] / bc1;
                let v_hat = vv[i] / bc2;
                wv[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
