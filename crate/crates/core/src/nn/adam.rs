//! Adam with bias-corrected moment estimates.

use super::gradcheck::ParamSet;
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Default::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState { m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0 }
    }
}

pub fn adam_update(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if param.shape() != grad.shape() || state.m.shape() != param.shape() {
        return Err(shape_err!("adam: param {:?}, grad {:?}, state {:?}", param.shape(), grad.shape(), state.m.shape()));
    }
    if !grad.all_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let p = param.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (k, &g) in grad.data().iter().enumerate() {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        p[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam over every tensor of a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<P: ParamSet>(params: &P, config: AdamConfig) -> Self {
        let states = params.tensors().iter().map(|t| AdamState::new(t.shape())).collect();
        Adam { config, states }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.tensors();
        for ((p, g), s) in params.tensors_mut().into_iter().zip(gs).zip(&mut self.states) {
            adam_update(p, g, s, &self.config)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [-3.0, 1e-3, 250.0] {
            let mut p = scalar(1.0);
            let mut st = AdamState::new(&[1]);
            adam_update(&mut p, &scalar(g), &mut st, &AdamConfig::with_lr(0.01)).unwrap();
            let moved = 1.0 - p.data()[0];
            assert!((moved - 0.01 * g.signum()).abs() < 1e-6, "{g}: {moved}");
            assert_eq!(st.t, 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_param() {
        let mut p = scalar(2.5);
        let mut st = AdamState::new(&[1]);
        adam_update(&mut p, &scalar(0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.data()[0], 2.5);
    }

    #[test]
    fn two_steps_match_hand_rolled() {
        let (lr, b1, b2, eps, g) = (0.1, 0.9, 0.999, 1e-8, 0.5);
        let mut x = 0.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&[1]);
        let cfg = AdamConfig { lr, beta1: b1, beta2: b2, eps };
        adam_update(&mut p, &scalar(g), &mut st, &cfg).unwrap();
        adam_update(&mut p, &scalar(g), &mut st, &cfg).unwrap();
        assert!((p.data()[0] - x).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let mut p = Tensor::new(vec![3], vec![0.1, -7.3, 1e-9]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[3]);
        for _ in 0..5 {
            let g = Tensor::new(vec![3], vec![1.0, -2.0, 1e6]).unwrap();
            adam_update(&mut p, &g, &mut st, &AdamConfig::with_lr(0.0)).unwrap();
        }
        assert_eq!(p, before);
        assert!(st.v.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&[1]);
        assert!(matches!(
            adam_update(&mut p, &scalar(f64::NAN), &mut st, &AdamConfig::default()),
            Err(Error::Numeric(_))
        ));
    }
}
