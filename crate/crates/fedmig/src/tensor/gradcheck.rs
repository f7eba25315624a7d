//! Central finite-difference gradient oracle.
//!
//! This module deliberately knows nothing about [`super::Tape`]'s backward
//! pass: it only calls a user-supplied forward evaluation, so it stays an
//! independent check of every analytic gradient in the crate.

use crate::error::Result;
use crate::tensor::Tensor;

/// Default probe step; with central differences the truncation error is
/// O(step^2), which at 1e-5 sits far below the 1e-4 acceptance tolerance.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Estimates the gradient of `f` at `at` by central differences,
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate.
pub fn finite_difference_gradient<F>(mut f: F, at: &Tensor, step: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut grad = Tensor::zeros(at.shape());
    let mut probe = at.clone();
    for i in 0..at.element_count() {
        let x0 = at.values()[i];
        probe.values_mut()[i] = x0 + step;
        let plus = f(&probe)?;
        probe.values_mut()[i] = x0 - step;
        let minus = f(&probe)?;
        probe.values_mut()[i] = x0;
        grad.values_mut()[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Scale-free disagreement between two gradients:
/// `|a - b|_2 / max(|a|_2, |b|_2, 1e-10)`. Zero when both vanish.
pub fn relative_gradient_error(a: &Tensor, b: &Tensor) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.values().iter().zip(b.values()) {
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_recovered() {
        // f(x) = sum(x_i^2) => grad = 2x.
        let at = Tensor::row(vec![1.5, -2.0, 0.25]);
        let fd = finite_difference_gradient(
            |x| Ok(x.values().iter().map(|v| v * v).sum()),
            &at,
            DEFAULT_STEP,
        )
        .unwrap();
        let exact = Tensor::row(vec![3.0, -4.0, 0.5]);
        assert!(relative_gradient_error(&fd, &exact) < 1e-9);
    }

    #[test]
    fn relative_error_of_zero_gradients_is_zero() {
        let z = Tensor::row(vec![0.0, 0.0]);
        assert_eq!(relative_gradient_error(&z, &z), 0.0);
    }
}
