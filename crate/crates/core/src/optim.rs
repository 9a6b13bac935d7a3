//! Named parameter storage, Adam, and the checkpoint blob format.
//!
//! Checkpoint blob (JSON): `{"params": [{"name", "shape", "values",
//! "trainable"}, ...]}` with records in registration order and values
//! row-major.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered, named parameters of one model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its index.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable: true,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn set_trainable(&mut self, pred: impl Fn(&str) -> bool, trainable: bool) {
        for p in &mut self.params {
            if pred(&p.name) {
                p.trainable = trainable;
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let store: ParamStore = serde_json::from_str(s)?;
        for p in &store.params {
            let numel: usize = p.value.shape().iter().product();
            if numel != p.value.numel() {
                return Err(Error::Schema(format!(
                    "parameter `{}` has shape {:?} but {} values",
                    p.name,
                    p.value.shape(),
                    p.value.numel()
                )));
            }
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |p: &Param| vec![0.0; p.value.numel()];
        Self {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every trainable parameter.
///
/// `grads[i]` belongs to parameter `i`; `None` means no gradient this step.
/// All gradients are validated before any parameter moves.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Option<Tensor>],
    state: &mut OptimizerState,
) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(shape_err("adam_step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.value.shape() {
                return Err(shape_err("adam_step", p.value.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let p = params.get_mut(i);
        if !p.trainable {
            continue;
        }
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for (((w, &gj), mj), vj) in p
            .value
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mj = beta1 * *mj + (1.0 - beta1) * gj;
            *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
            let m_hat = *mj / bc1;
            let v_hat = *vj / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
