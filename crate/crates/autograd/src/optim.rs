use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
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

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// One bias-corrected Adam update of `param` in place. `step` is 1-based.
pub fn adam_step<T: Real>(param: &mut [T], grad: &[T], state: &mut AdamState, step: u64, cfg: &AdamConfig) {
    assert_eq!(param.len(), grad.len());
    if state.m.len() != param.len() {
        state.m = vec![0.0; param.len()];
        state.v = vec![0.0; param.len()];
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for ((p, g), (m, v)) in param
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let g = g.as_f64();
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = T::of(p.as_f64() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps));
    }
}

/// Adam over a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            states: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using each parameter's accumulated gradient;
    /// parameters without a gradient see a zero gradient.
    pub fn step<T: Real>(&mut self, params: &[Tensor<T>]) {
        if self.states.len() != params.len() {
            self.states = vec![AdamState::default(); params.len()];
        }
        self.step += 1;
        for (p, state) in params.iter().zip(self.states.iter_mut()) {
            let grad = p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]);
            p.update(|data| adam_step(data, &grad, state, self.step, &self.config));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.5f64, -2.0];
        let mut s = AdamState::default();
        let cfg = AdamConfig::with_lr(0.1);
        for t in 1..=50 {
            adam_step(&mut p, &[0.0, 0.0], &mut s, t, &cfg);
        }
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn first_step_is_lr_sized_for_any_scale() {
        let cfg = AdamConfig::with_lr(0.01);
        for scale in [1e-3, 1.0, 1e3, 1e6] {
            let mut p = vec![0.0f64];
            adam_step(&mut p, &[scale], &mut AdamState::default(), 1, &cfg);
            assert!((p[0].abs() - 0.01).abs() < 1e-6, "scale {scale}: {}", p[0]);
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let cfg = AdamConfig::with_lr(0.01);
        let mut w = vec![1.0f64];
        let mut s = AdamState::default();
        let mut prev = w[0].abs();
        for t in 1..=100 {
            let g = [2.0 * w[0]];
            adam_step(&mut w, &g, &mut s, t, &cfg);
            assert!(w[0].abs() < prev, "step {t}: |w| {} !< {prev}", w[0].abs());
            prev = w[0].abs();
        }
    }

    #[test]
    fn optimizer_uses_tensor_grads() {
        let p = Tensor::<f64>::param(vec![1.0], &[1]);
        crate::ops::sum(&crate::ops::mul(&p, &p).unwrap()).backward();
        let mut opt = Adam::new(AdamConfig::with_lr(0.5));
        opt.step(&[p.clone()]);
        assert!((p.item() - 0.5).abs() < 1e-6);
        assert_eq!(opt.steps_taken(), 1);
    }
}
