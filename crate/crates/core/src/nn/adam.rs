use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

/// Adam hyperparameters. Defaults: η = 0.001, β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize], config: AdamConfig) -> Self {
        Self { config, m: Tensor::zeros(shape), v: Tensor::zeros(shape), t: 0 }
    }
}

/// One bias-corrected Adam update of `param` in place.
///
/// Non-finite gradient entries abort the step before any state is touched.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) -> Result<(), NnError> {
    if param.shape() != grad.shape() || state.m.shape() != param.shape() {
        return Err(NnError::ShapeMismatch {
            op: "adam_step",
            detail: format!("param {:?}, grad {:?}, state {:?}", param.shape(), grad.shape(), state.m.shape()),
        });
    }
    let bad = grad.data().iter().filter(|g| !g.is_finite()).count();
    if bad > 0 {
        return Err(NnError::NonFiniteGradient { count: bad });
    }
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::new(vec![3], vec![0.5, -1.25, 3.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(&[3], AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut p, &Tensor::zeros(&[3]), &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.t, 5);
    }

    #[test]
    fn first_step_closed_form() {
        // m̂ = g, v̂ = g² after one step, so Δ = η g / (|g| + ε).
        let mut p = Tensor::new(vec![1], vec![0.0]).unwrap();
        let mut st = AdamState::new(&[1], AdamConfig::default());
        adam_step(&mut p, &Tensor::new(vec![1], vec![1.0]).unwrap(), &mut st).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn two_steps_match_scripted_trace() {
        // Hand trace, g1 = 1, g2 = -0.5, defaults:
        // m1 = 0.1, v1 = 0.001, m̂1 = 1, v̂1 = 1
        // m2 = 0.09 - 0.05 = 0.04, v2 = 0.000999 + 0.00025 = 0.001249
        // m̂2 = 0.04 / 0.19, v̂2 = 0.001249 / 0.001999
        let mut p = Tensor::new(vec![1], vec![2.0]).unwrap();
        let mut st = AdamState::new(&[1], AdamConfig::default());
        adam_step(&mut p, &Tensor::new(vec![1], vec![1.0]).unwrap(), &mut st).unwrap();
        adam_step(&mut p, &Tensor::new(vec![1], vec![-0.5]).unwrap(), &mut st).unwrap();
        let p1 = 2.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        let m_hat = 0.04 / (1.0 - 0.81);
        let v_hat = 0.001249 / (1.0 - 0.999f64.powi(2));
        let p2 = p1 - 0.001 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.data()[0] - p2).abs() < 1e-14, "{} vs {}", p.data()[0], p2);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut st = AdamState::new(&[2], AdamConfig::default());
        let err = adam_step(&mut p, &Tensor::new(vec![2], vec![f64::NAN, 1.0]).unwrap(), &mut st).unwrap_err();
        assert!(matches!(err, NnError::NonFiniteGradient { count: 1 }));
        assert_eq!(p.data(), &[1.0, 2.0]);
        assert_eq!(st.t, 0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = AdamState::new(&[2], AdamConfig::default());
        assert!(adam_step(&mut p, &Tensor::zeros(&[3]), &mut st).is_err());
    }
}
