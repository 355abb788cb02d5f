use crate::error::{Error, Result};
use crate::nn::mlp::{GradientSet, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the model they serve.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub config: AdamConfig,
    first_moment: GradientSet,
    second_moment: GradientSet,
}

impl AdamState {
    pub fn new(model: &MlpModel, config: AdamConfig) -> Self {
        Self {
            step: 0,
            config,
            first_moment: GradientSet::zeros_like(model),
            second_moment: GradientSet::zeros_like(model),
        }
    }
}

/// One bias-corrected Adam update of `model` in place.
pub fn adam_step(model: &mut MlpModel, grads: &GradientSet, state: &mut AdamState) -> Result<()> {
    if !grads.matches(model) || !state.first_moment.matches(model) {
        return Err(Error::shape("gradient or optimizer state does not match the model"));
    }
    for (i, g) in grads.layers.iter().enumerate() {
        if !g.weight.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in layer {i} weight")));
        }
        if g.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in layer {i} bias")));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    };

    for (((layer, g), m), v) in model
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.first_moment.layers.iter_mut())
        .zip(state.second_moment.layers.iter_mut())
    {
        update(
            layer.weight.as_mut_slice(),
            g.weight.as_slice(),
            m.weight.as_mut_slice(),
            v.weight.as_mut_slice(),
        );
        update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias);
    }
    model.bump_version();
    Ok(())
}
