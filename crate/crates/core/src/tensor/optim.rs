use super::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-5, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update on a single buffer. `step` is 1-based.
pub fn adam_step(params: &mut [f64], grads: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &AdamConfig) {
    assert!(step >= 1);
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam state over a [`ParamStore`]. Parameters without a gradient are
/// updated as if their gradient were zero.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = |s: usize| vec![0.0; store.values(s).len()];
        Adam { config, step: 0, m: (0..store.len()).map(zeros).collect(), v: (0..store.len()).map(zeros).collect() }
    }

    /// Applies the accumulated gradients and clears them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let grads = store.take_grads();
        for (slot, g) in grads.into_iter().enumerate() {
            let n = store.values(slot).len();
            let g = g.unwrap_or_else(|| vec![0.0; n]);
            let params = store.values_mut(slot);
            adam_step(params, &g, &mut self.m[slot], &mut self.v[slot], self.step, &self.config);
        }
    }
}
