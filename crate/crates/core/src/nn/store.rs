//! Named parameter storage with gradient slots and Adam moments.
//! Parameter order is creation order, which makes initialization and
//! checkpoints reproducible from a seed.

use std::collections::HashMap;

use crate::rng::{uniform_f32, Rng};

use super::tensor::{NnError, TensorValue};

#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// uniform(-scale, scale); scale = sqrt(1 / d_in) at call sites.
    Uniform { scale: f32 },
    Constant(f32),
}

#[derive(Clone, Debug)]
pub struct ParamSlot {
    pub name: String,
    pub value: TensorValue,
    pub grad: Vec<f32>,
    m: Vec<f32>,
    v: Vec<f32>,
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    slots: Vec<ParamSlot>,
    by_name: HashMap<String, usize>,
    step: u64,
    grads_ready: bool,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        init: Init,
        rng: &mut Rng,
    ) -> Result<usize, NnError> {
        if self.by_name.contains_key(name) {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::Uniform { scale } => (0..numel).map(|_| uniform_f32(rng, scale)).collect(),
            Init::Constant(c) => vec![c; numel],
        };
        let value = TensorValue::new(shape, data)?;
        let idx = self.slots.len();
        self.slots.push(ParamSlot {
            name: name.to_string(),
            grad: vec![0.0; value.numel()],
            m: vec![0.0; value.numel()],
            v: vec![0.0; value.numel()],
            value,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(idx)
    }

    /// Insert a parameter with explicit values (checkpoint loading).
    pub fn insert_value(&mut self, name: &str, value: TensorValue) -> Result<usize, NnError> {
        if self.by_name.contains_key(name) {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let idx = self.slots.len();
        self.slots.push(ParamSlot {
            name: name.to_string(),
            grad: vec![0.0; value.numel()],
            m: vec![0.0; value.numel()],
            v: vec![0.0; value.numel()],
            value,
        });
        self.by_name.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn index_of(&self, name: &str) -> Result<usize, NnError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn slot(&self, idx: usize) -> &ParamSlot {
        &self.slots[idx]
    }

    pub fn value(&self, name: &str) -> Result<&TensorValue, NnError> {
        Ok(&self.slots[self.index_of(name)?].value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut TensorValue, NnError> {
        let idx = self.index_of(name)?;
        Ok(&mut self.slots[idx].value)
    }

    pub fn grad(&self, name: &str) -> Result<&[f32], NnError> {
        Ok(&self.slots[self.index_of(name)?].grad)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamSlot> {
        self.slots.iter()
    }

    pub fn n_values(&self) -> usize {
        self.slots.iter().map(|s| s.value.numel()).sum()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.slots {
            slot.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.grads_ready = false;
    }

    pub(crate) fn accumulate_grad(&mut self, idx: usize, grad: &[f32]) {
        let slot = &mut self.slots[idx];
        debug_assert_eq!(slot.grad.len(), grad.len());
        for (g, d) in slot.grad.iter_mut().zip(grad) {
            *g += d;
        }
        self.grads_ready = true;
    }

    /// Gradients count as populated even if every contribution was zero.
    pub(crate) fn mark_grads_ready(&mut self) {
        self.grads_ready = true;
    }

    pub fn scale_grads(&mut self, factor: f32) {
        for slot in &mut self.slots {
            slot.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|s| s.grad.iter())
            .map(|&g| (g as f64) * (g as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Scale gradients down so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads((max_norm / norm) as f32);
        }
    }

    /// Bias-corrected Adam update over every slot; increments the step
    /// counter. Gradients must have been populated since the last
    /// `zero_grads`.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), NnError> {
        if !self.grads_ready {
            return Err(NnError::MissingGradients);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for slot in &mut self.slots {
            let data = slot.value.data_mut();
            for i in 0..data.len() {
                let g = slot.grad[i];
                slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
                slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
