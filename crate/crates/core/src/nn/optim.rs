use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::param::Param;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-4)
    }
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd_momentum(learning_rate: f64, momentum: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            ..Self::adam(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Argument(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Per-parameter optimizer memory: first moment (or velocity) and second
/// moment. Empty until the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One Adam or momentum-SGD update of `params` in place.
pub fn optimizer_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut SlotState,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "{} parameters vs {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.m.is_empty() {
        state.m = vec![0.0; params.len()];
        state.v = vec![0.0; params.len()];
    } else if state.m.len() != params.len() {
        return Err(Error::Dimension("optimizer state shape".into()));
    }
    state.step += 1;
    let lr = config.learning_rate;
    match config.kind {
        OptimizerKind::SgdMomentum => {
            for ((p, g), v) in params.iter_mut().zip(grads).zip(state.m.iter_mut()) {
                *v = config.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        OptimizerKind::Adam => {
            let t = state.step as i32;
            let c1 = 1.0 - config.beta1.powi(t);
            let c2 = 1.0 - config.beta2.powi(t);
            for (((p, g), m), v) in params
                .iter_mut()
                .zip(grads)
                .zip(state.m.iter_mut())
                .zip(state.v.iter_mut())
            {
                *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + config.epsilon);
            }
        }
    }
    Ok(())
}

/// Optimizer over named parameters, keeping one [`SlotState`] per name.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    slots: BTreeMap<String, SlotState>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            slots: BTreeMap::new(),
        })
    }

    /// Steps every parameter with `requires_grad` set.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Param>) -> Result<()> {
        for p in params {
            if !p.requires_grad {
                continue;
            }
            let slot = self.slots.entry(p.name.clone()).or_default();
            optimizer_step(&mut p.value, &p.grad, slot, &self.config)?;
        }
        Ok(())
    }
}
