//! Trainable parameter storage and the adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GraphError, Tensor};

/// Stable handle of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
struct Param {
    name: String,
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameter tensors together with their adam moment estimates.
///
/// The step count is shared by all parameters: one call to [`ParamStore::adam_step`]
/// advances it once.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

/// Adam hyperparameters. Defaults are lr 0.01, β1 0.9, β2 0.999, ε 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Gradients indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub(crate) fn new(grads: Vec<Tensor>) -> Self {
        Self { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0)
    }

    pub fn by_name<'a>(&'a self, store: &ParamStore, name: &str) -> Option<&'a Tensor> {
        store.id(name).and_then(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(Tensor::all_finite)
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.id(&name).is_none(), "duplicate parameter name {name}");
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.params.push(Param { name, value, m, v });
        ParamId(self.params.len() - 1)
    }

    /// Register a parameter drawn uniformly from [-1/√fan_in, 1/√fan_in].
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).map(|p| &p.value)
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn first_moment(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].m
    }

    pub fn second_moment(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].v
    }

    /// Replace a parameter's value. The shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), GraphError> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(GraphError::InvalidTensor(format!(
                "parameter {} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// One bias-corrected adam update. Parameters without a gradient entry are
    /// treated as having a zero gradient.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) -> Result<(), GraphError> {
        for (i, p) in self.params.iter().enumerate() {
            if let Some(g) = grads.grads.get(i) {
                if g.shape() != p.value.shape() {
                    return Err(GraphError::InvalidTensor(format!(
                        "gradient for {} has shape {:?}, parameter is {:?}",
                        p.name,
                        g.shape(),
                        p.value.shape()
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, p) in self.params.iter_mut().enumerate() {
            let g = grads.grads.get(i).map(Tensor::data);
            let n = p.value.len();
            let (w, m, v) = (p.value.data_mut(), p.m.data_mut(), p.v.data_mut());
            for k in 0..n {
                let gk = g.map_or(0.0, |g| g[k]);
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                w[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// Iterate `(name, value)` pairs in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }
}
