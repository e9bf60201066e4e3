//! AdamW: Adam with decoupled weight decay.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::detector::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step_count: u64,
    first_moment: BTreeMap<String, Matrix>,
    second_moment: BTreeMap<String, Matrix>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step_count: 0,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// One update over every named parameter. Parameters without a gradient
    /// entry are only weight-decayed.
    pub fn step(&mut self, params: &mut ModelParams, grads: &HashMap<String, Matrix>) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (name, value) in params.entries_mut() {
            // Decoupled weight decay.
            if self.weight_decay > 0.0 {
                value.mapv_inplace(|v| v - self.learning_rate * self.weight_decay * v);
            }
            let Some(grad) = grads.get(&name) else {
                continue;
            };
            debug_assert_eq!(grad.dim(), value.dim(), "gradient shape for {name}");
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(value.dim()));
            let v_acc = self
                .second_moment
                .entry(name)
                .or_insert_with(|| Matrix::zeros(value.dim()));
            for ((p, g), (m, v)) in value
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v_acc.iter_mut()))
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
