use super::params::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Shrink weights directly (AdamW) instead of adding `γθ` to the gradient.
    #[serde(default)]
    pub decoupled_weight_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decoupled_weight_decay: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Option<Vec<f64>>>,
    second: Vec<Option<Vec<f64>>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, store: &ParameterStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| p.trainable.then(|| vec![0.0; p.numel()]))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every trainable parameter, then
/// clears the gradients.
pub fn adam_step(store: &mut ParameterStore, state: &mut AdamState) -> Result<()> {
    for id in store.ids() {
        if let Some(g) = store.grad(id) {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(store.param(id).name.clone()));
            }
        }
    }
    let AdamConfig {
        learning_rate: lr,
        beta1,
        beta2,
        eps,
        weight_decay,
        decoupled_weight_decay,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for id in store.ids().collect::<Vec<_>>() {
        let (param, grad) = store.param_and_grad_mut(id);
        let Some(grad) = grad else { continue };
        let m = state.first[id.index()].as_mut().expect("moment layout matches store");
        let v = state.second[id.index()].as_mut().expect("moment layout matches store");
        for (((theta, g), m), v) in param.values.iter_mut().zip(grad.iter()).zip(m).zip(v) {
            let mut g = *g;
            if decoupled_weight_decay {
                *theta -= lr * weight_decay * *theta;
            } else {
                g += weight_decay * *theta;
            }
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    store.zero_grad();
    Ok(())
}
