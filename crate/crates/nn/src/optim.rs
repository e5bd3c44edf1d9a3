use ndarray::{ArrayD, Zip};

use crate::param::{Param, Role};

/// First-order optimizers. State is keyed by parameter position, so the same
/// parameter list order must be passed on every step.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Adadelta(Adadelta),
}

impl Optimizer {
    pub fn step(&mut self, params: &mut [(String, &mut Param)]) {
        match self {
            Optimizer::Adam(o) => o.step(params),
            Optimizer::Adadelta(o) => o.step(params),
        }
    }

    pub fn learning_rate(&self) -> f32 {
        match self {
            Optimizer::Adam(o) => o.lr,
            Optimizer::Adadelta(o) => o.lr,
        }
    }
}

fn ensure_state(state: &mut Vec<ArrayD<f32>>, params: &[(String, &mut Param)]) {
    if state.len() != params.len() {
        *state = params.iter().map(|(_, p)| ArrayD::zeros(p.value.raw_dim())).collect();
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u32,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [(String, &mut Param)]) {
        ensure_state(&mut self.m, params);
        ensure_state(&mut self.v, params);
        self.step += 1;
        let t = self.step as i32;
        let lr_t = self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            if !p.is_trainable() {
                continue;
            }
            let Param { value, grad, .. } = &mut **p;
            Zip::from(value)
                .and(&*grad)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr_t * *m / (v.sqrt() + eps);
                });
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adadelta {
    pub lr: f32,
    pub rho: f32,
    pub eps: f32,
    acc_grad: Vec<ArrayD<f32>>,
    acc_delta: Vec<ArrayD<f32>>,
}

impl Adadelta {
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            rho: 0.95,
            eps: 1e-7,
            acc_grad: Vec::new(),
            acc_delta: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [(String, &mut Param)]) {
        ensure_state(&mut self.acc_grad, params);
        ensure_state(&mut self.acc_delta, params);
        let (rho, eps, lr) = (self.rho, self.eps, self.lr);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            if !p.is_trainable() {
                continue;
            }
            let Param { value, grad, .. } = &mut **p;
            Zip::from(value)
                .and(&*grad)
                .and(&mut self.acc_grad[i])
                .and(&mut self.acc_delta[i])
                .for_each(|w, &g, ag, ad| {
                    *ag = rho * *ag + (1.0 - rho) * g * g;
                    let delta = (*ad + eps).sqrt() / (*ag + eps).sqrt() * g;
                    *ad = rho * *ad + (1.0 - rho) * delta * delta;
                    *w -= lr * delta;
                });
        }
    }
}

/// Adds the gradient of `coeff * Σ w²` over every trainable kernel and
/// returns the penalty value.
pub fn apply_l2(params: &mut [(String, &mut Param)], coeff: f32) -> f32 {
    let mut penalty = 0.0f64;
    for (_, p) in params.iter_mut() {
        if p.role != Role::Kernel || !p.is_trainable() {
            continue;
        }
        let Param { value, grad, .. } = &mut **p;
        Zip::from(grad).and(&*value).for_each(|g, &w| {
            penalty += (w * w) as f64;
            *g += 2.0 * coeff * w;
        });
    }
    (penalty * coeff as f64) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn quadratic_param(start: f32) -> Param {
        Param::new(ArrayD::from_elem(IxDyn(&[1]), start), Role::Kernel)
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = quadratic_param(1.0);
        p.grad[[0]] = 2.0;
        let mut opt = Adam::new(0.01);
        opt.step(&mut [("w".into(), &mut p)]);
        assert!((p.value[[0]] - 0.99).abs() < 1e-5);
    }

    #[test]
    fn adadelta_first_step_matches_hand_computation() {
        // acc_g = 0.05 * 6^2 = 1.8; delta = sqrt(1e-7) / sqrt(1.8 + 1e-7) * 6
        let mut p = quadratic_param(3.0);
        p.grad[[0]] = 6.0;
        let mut opt = Adadelta::new(1.0);
        opt.step(&mut [("w".into(), &mut p)]);
        let expected = 3.0 - (1e-7f64).sqrt() / (1.8f64 + 1e-7).sqrt() * 6.0;
        assert!((p.value[[0]] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn frozen_and_buffer_params_are_untouched() {
        let mut a = quadratic_param(1.0);
        a.frozen = true;
        a.grad[[0]] = 1.0;
        let mut b = Param::new(ArrayD::from_elem(IxDyn(&[1]), 5.0), Role::Buffer);
        let mut opt = Adam::new(0.1);
        opt.step(&mut [("a".into(), &mut a), ("b".into(), &mut b)]);
        assert_eq!(a.value[[0]], 1.0);
        assert_eq!(b.value[[0]], 5.0);
    }

    #[test]
    fn l2_penalty_and_gradient() {
        let mut p = quadratic_param(2.0);
        let mut bias = Param::new(ArrayD::from_elem(IxDyn(&[1]), 2.0), Role::Bias);
        let pen = apply_l2(&mut [("w".into(), &mut p), ("b".into(), &mut bias)], 0.5);
        assert!((pen - 2.0).abs() < 1e-6);
        assert!((p.grad[[0]] - 2.0).abs() < 1e-6);
        assert_eq!(bias.grad[[0]], 0.0);
    }
}
