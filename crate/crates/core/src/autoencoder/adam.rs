use super::network::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, cfg: &AdamConfig) {
    params.step += 1;
    let t = params.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    };
    for (l, g) in grads.layers.iter().enumerate() {
        let (p, m, v) = (
            &mut params.layers[l],
            &mut params.first_moment[l],
            &mut params.second_moment[l],
        );
        for i in 0..g.weight.len() {
            update(&mut p.weight[i], &mut m.weight[i], &mut v.weight[i], g.weight[i]);
        }
        for i in 0..g.bias.len() {
            update(&mut p.bias[i], &mut m.bias[i], &mut v.bias[i], g.bias[i]);
        }
    }
}
