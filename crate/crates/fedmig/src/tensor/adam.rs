//! Adam optimizer with bias correction.
//!
//!   m_t = b1 m_{t-1} + (1-b1) g          v_t = b2 v_{t-1} + (1-b2) g^2
//!   p  -= lr * (m_t / (1-b1^t)) / (sqrt(v_t / (1-b2^t)) + eps)
//!
//! A zero gradient applied to zero moments leaves the parameter bit-exactly
//! unchanged, which the federation relies on: parameters off a loss path
//! must not drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state for a parameter with `len` elements.
    pub fn new(len: usize, learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// Applies one Adam update in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::shape(
            "adam_step",
            format!("param {:?} vs grad {:?}", param.shape(), grad.shape()),
        ));
    }
    if param.element_count() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "state sized for {} elements, param has {}",
                state.first_moment.len(),
                param.element_count()
            ),
        ));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient in adam_step".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);
    for ((p, &g), (m, v)) in param
        .values_mut()
        .iter_mut()
        .zip(grad.values())
        .zip(state.first_moment.iter_mut().zip(&mut state.second_moment))
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_nearly_learning_rate() {
        // With g = 1 from rest: m_hat = 1, v_hat = 1, step = lr / (1 + eps).
        let mut p = Tensor::scalar(0.5);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(1, 0.01);
        adam_step(&mut p, &g, &mut st).unwrap();
        let expected = 0.5 - 0.01 / (1.0 + 1e-8);
        assert!((p.values()[0] - expected).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn second_step_matches_hand_recurrence() {
        // g = 1 twice: m2 = 1-b1^2 pre-correction ... compute both steps by hand.
        let mut p = Tensor::scalar(0.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(1, 0.1);
        adam_step(&mut p, &g, &mut st).unwrap();
        adam_step(&mut p, &g, &mut st).unwrap();

        let (b1, b2, lr, eps) = (0.9, 0.999, 0.1, 1e-8);
        let mut m = 0.0;
        let mut v = 0.0;
        let mut q = 0.0;
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * 1.0;
            v = b2 * v + (1.0 - b2) * 1.0;
            let mh = m / (1.0 - b1_pow(b1, t));
            let vh: f64 = v / (1.0 - b1_pow(b2, t));
            q -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p.values()[0] - q).abs() < 1e-15);

        fn b1_pow(b: f64, t: i32) -> f64 {
            b.powi(t)
        }
    }

    #[test]
    fn zero_gradient_with_zero_moments_is_identity() {
        let mut p = Tensor::row(vec![1.25, -7.5e3]);
        let before = p.clone();
        let g = Tensor::row(vec![0.0, 0.0]);
        let mut st = AdamState::new(2, 0.01);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn rejects_shape_mismatch_and_non_finite_gradient() {
        let mut p = Tensor::row(vec![1.0, 2.0]);
        let mut st = AdamState::new(2, 0.01);
        assert!(adam_step(&mut p, &Tensor::scalar(1.0), &mut st).is_err());
        let bad = Tensor::row(vec![f64::NAN, 0.0]);
        assert!(adam_step(&mut p, &bad, &mut st).is_err());
    }
}
