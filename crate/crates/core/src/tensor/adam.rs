use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    first: Vec<f64>,
    second: Vec<f64>,
}

/// Adam optimizer with bias correction and per-call learning rates.
///
/// Moment slots are keyed by parameter name so that parameters may live in
/// different learning-rate groups (the caller passes each parameter's rate
/// on every update). The step counter increases by one per [`Adam::begin_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advance the shared step counter; call once before updating the
    /// parameters belonging to that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Apply one Adam update to a single parameter at the given rate.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        if param.shape() != grad.shape() {
            return Err(Error::shapes("adam_step", param.shape(), grad.shape()));
        }
        if self.step == 0 {
            return Err(Error::invalid("adam_step", "begin_step was never called"));
        }
        let n = param.numel();
        let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            first: vec![0.0; n],
            second: vec![0.0; n],
        });
        if slot.first.len() != n {
            return Err(Error::invalid(
                "adam_step",
                format!("moment size {} does not match parameter {}", slot.first.len(), name),
            ));
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let data = param.data_mut();
        for i in 0..n {
            let g = grad.data()[i];
            slot.first[i] = self.beta1 * slot.first[i] + (1.0 - self.beta1) * g;
            slot.second[i] = self.beta2 * slot.second[i] + (1.0 - self.beta2) * g * g;
            let m_hat = slot.first[i] / bc1;
            let v_hat = slot.second[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    /// Moment tensors for checkpointing, in deterministic (name-sorted) order.
    pub fn export_slots(&self) -> Vec<(String, Tensor, Tensor)> {
        self.slots
            .iter()
            .map(|(name, slot)| {
                (
                    name.clone(),
                    Tensor::vector(slot.first.clone()),
                    Tensor::vector(slot.second.clone()),
                )
            })
            .collect()
    }

    pub fn import_slot(&mut self, name: &str, first: Vec<f64>, second: Vec<f64>) {
        self.slots.insert(name.to_string(), Slot { first, second });
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new()
    }
}
