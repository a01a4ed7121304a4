use super::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
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

/// First/second moment estimates. Starts empty and is zero-initialised on
/// the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update applied in place to `params`.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::invalid(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    if params.len() != grads.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params vs {} grads", params.len(), grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", format!("{:?} vs {:?}", p.shape(), g.shape())));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::shape("adam_step", "state does not match parameters"));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[1, 3])];
        let mut state = AdamState::new();
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction -> delta = lr / (1 + eps)
        let cfg = AdamConfig::default();
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new();
        adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state, &cfg).unwrap();
        let expected = -cfg.lr / (1.0 + cfg.eps);
        assert!((params[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn deterministic_given_state() {
        let cfg = AdamConfig::default();
        let grads = vec![Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap()];
        let mut state = AdamState::new();
        let mut p = vec![Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap()];
        adam_step(&mut p, &grads, &mut state, &cfg).unwrap();
        let (mut p1, mut s1) = (p.clone(), state.clone());
        let (mut p2, mut s2) = (p.clone(), state.clone());
        adam_step(&mut p1, &grads, &mut s1, &cfg).unwrap();
        adam_step(&mut p2, &grads, &mut s2, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn rejects_non_positive_lr_and_misaligned_inputs() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut s = AdamState::new();
        let bad = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(adam_step(&mut p, &[Tensor::scalar(1.0)], &mut s, &bad).is_err());
        assert!(adam_step(&mut p, &[Tensor::zeros(&[1, 2])], &mut s, &AdamConfig::default()).is_err());
    }
}
