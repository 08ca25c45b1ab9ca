//! Named parameter storage with per-parameter Adam state.

use std::collections::BTreeMap;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Adam plus a step-decay learning-rate schedule.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OptimizerConfig {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_every_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            base_lr: 1e-3,
            decay_factor: 0.9,
            decay_every_steps: 40_000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor {} must be in (0, 1]",
                self.decay_factor
            )));
        }
        if self.decay_every_steps < 1 {
            return Err(Error::Config("decay_every_steps must be >= 1".to_string()));
        }
        if !self.base_lr.is_finite() || self.base_lr < 0.0 {
            return Err(Error::Config(format!("base_lr {} invalid", self.base_lr)));
        }
        Ok(())
    }
}

/// Learning rate at a global step: `base_lr * decay_factor^floor(step / decay_every_steps)`.
pub fn lr_at(step: u64, cfg: &OptimizerConfig) -> f64 {
    cfg.base_lr * cfg.decay_factor.powi((step / cfg.decay_every_steps) as i32)
}

#[derive(Debug, Clone)]
pub(crate) struct ParamEntry {
    pub value: Tensor,
    pub moment1: Tensor,
    pub moment2: Tensor,
    pub step: u64,
}

/// All trainable tensors, keyed by name. BTreeMap keeps iteration (and hence
/// checkpoint layout and update order) deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    pub(crate) entries: BTreeMap<String, ParamEntry>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::State(format!("parameter {name:?} already exists")));
        }
        let shape = value.shape().to_vec();
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                moment1: Tensor::zeros(&shape),
                moment2: Tensor::zeros(&shape),
                step: 0,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| Error::State(format!("no parameter named {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| Error::State(format!("no parameter named {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// One bias-corrected Adam update over every parameter. `grads` must
    /// contain a gradient for each parameter in the store.
    pub fn adam_step(
        &mut self,
        grads: &HashMap<String, Tensor>,
        cfg: &OptimizerConfig,
        global_step: u64,
    ) -> Result<()> {
        let lr = lr_at(global_step, cfg);
        for (name, entry) in self.entries.iter_mut() {
            let grad = grads
                .get(name)
                .ok_or_else(|| Error::State(format!("missing gradient for parameter {name:?}")))?;
            adam_update_entry(name, entry, grad, cfg, lr)?;
        }
        Ok(())
    }

    /// Adam update for a single named parameter, leaving the rest untouched.
    pub fn adam_step_single(
        &mut self,
        name: &str,
        grad: &Tensor,
        cfg: &OptimizerConfig,
        global_step: u64,
    ) -> Result<()> {
        let lr = lr_at(global_step, cfg);
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::State(format!("no parameter named {name:?}")))?;
        adam_update_entry(name, entry, grad, cfg, lr)
    }
}

fn adam_update_entry(
    name: &str,
    entry: &mut ParamEntry,
    grad: &Tensor,
    cfg: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    if grad.shape() != entry.value.shape() {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match parameter {name:?} shape {:?}",
            grad.shape(),
            entry.value.shape()
        )));
    }
    entry.step += 1;
    let t = entry.step;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let m = entry.moment1.data_mut();
    for (mv, &gv) in m.iter_mut().zip(grad.data()) {
        *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv;
    }
    let v = entry.moment2.data_mut();
    for (vv, &gv) in v.iter_mut().zip(grad.data()) {
        *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv;
    }
    let m = entry.moment1.data();
    let v = entry.moment2.data();
    for ((pv, &mv), &vv) in entry.value.data_mut().iter_mut().zip(m).zip(v) {
        let m_hat = mv / bc1;
        let v_hat = vv / bc2;
        *pv -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    if !entry.value.all_finite() {
        return Err(Error::Numeric(format!(
            "parameter {name:?} became non-finite after update"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_matches_formula() {
        let cfg = OptimizerConfig {
            base_lr: 5e-5,
            decay_factor: 0.9,
            decay_every_steps: 40_000,
            ..Default::default()
        };
        assert_eq!(lr_at(0, &cfg), 5e-5);
        assert!((lr_at(40_000, &cfg) - 4.5e-5).abs() < 1e-20);
        assert!((lr_at(80_001, &cfg) - 5e-5 * 0.81).abs() < 1e-18);
        assert_eq!(lr_at(39_999, &cfg), 5e-5);
    }

    #[test]
    fn first_adam_step_moves_by_about_lr() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::scalar(0.0)).unwrap();
        let cfg = OptimizerConfig {
            base_lr: 0.01,
            ..Default::default()
        };
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0));
        store.adam_step(&grads, &cfg, 0).unwrap();
        let w = store.get("w").unwrap().item();
        // first bias-corrected step is -lr * g / (|g| + eps)
        assert!((w + 0.01).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParameterStore::new();
        store
            .insert("w", Tensor::from_vec(&[2], vec![1.5, -2.5]).unwrap())
            .unwrap();
        let cfg = OptimizerConfig::default();
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::zeros(&[2]));
        for step in 0..5 {
            store.adam_step(&grads, &cfg, step).unwrap();
        }
        assert_eq!(store.get("w").unwrap().data(), &[1.5, -2.5]);
    }

    #[test]
    fn zero_lr_is_a_no_op_for_any_gradient() {
        let mut store = ParameterStore::new();
        store
            .insert("w", Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap())
            .unwrap();
        let cfg = OptimizerConfig {
            base_lr: 0.0,
            ..Default::default()
        };
        let mut grads = HashMap::new();
        grads.insert(
            "w".to_string(),
            Tensor::from_vec(&[3], vec![5.0, -3.0, 100.0]).unwrap(),
        );
        store.adam_step(&grads, &cfg, 0).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[0.1, 0.2, 0.3]);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::scalar(0.0)).unwrap();
        let grads = HashMap::new();
        let err = store
            .adam_step(&grads, &OptimizerConfig::default(), 0)
            .unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn lr_decays_exactly_at_boundary() {
        let cfg = OptimizerConfig {
            base_lr: 1.0,
            decay_factor: 0.9,
            decay_every_steps: 10,
            ..Default::default()
        };
        assert_eq!(lr_at(10, &cfg), 0.9);
    }
}
