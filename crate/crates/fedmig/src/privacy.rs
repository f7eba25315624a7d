//! Differential privacy for uploaded prototypes: row-wise L2 clipping
//! followed by the Gaussian mechanism.
//!
//! The noise scale follows the analytic calibration
//! `sigma = sensitivity * sqrt(2 ln(1.25 / delta)) / epsilon`, valid for
//! `epsilon <= 1`. A clipped row has L2 norm at most `clip_norm`, so
//! replacing one client's contribution to a mean of `count` rows moves it
//! by at most `2 * clip_norm / count`; the flat mode conservatively uses
//! `2 * clip_norm`.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub delta: f64,
    /// Maximum L2 norm of any uploaded prototype row.
    pub clip_norm: f64,
    /// When set, each row's sensitivity is divided by the number of
    /// nodes that contributed to it, matching mean-statistic semantics.
    pub per_count_sensitivity: bool,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            enabled: false,
            epsilon: 1.0,
            delta: 1e-5,
            clip_norm: 1.0,
            per_count_sensitivity: false,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1] for this calibration, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// Gaussian mechanism noise scale for the given sensitivity.
pub fn gaussian_sigma(epsilon: f64, delta: f64, sensitivity: f64) -> f64 {
    sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon
}

/// Rescales every row to L2 norm at most `clip_norm`. The rescale loops
/// until the norm check passes, so applying the function twice produces
/// bit-identical output: rounding can leave a scaled row a hair above the
/// bound, and the loop absorbs that.
pub fn clip_rows(t: &mut Tensor, clip_norm: f64) {
    let (rows, cols) = t.dims2();
    for r in 0..rows {
        loop {
            let start = r * cols;
            let row = &mut t.values_mut()[start..start + cols];
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm <= clip_norm || norm == 0.0 {
                break;
            }
            let scale = clip_norm / norm;
            row.iter_mut().for_each(|x| *x *= scale);
        }
    }
}

/// Clips rows and adds calibrated Gaussian noise in place. `counts`, when
/// given with `per_count_sensitivity`, must hold one contributor count
/// per row; rows with zero contributors keep the flat sensitivity.
pub fn clip_and_perturb(
    t: &mut Tensor,
    cfg: &DpConfig,
    counts: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    cfg.validate()?;
    if !cfg.enabled {
        return Ok(());
    }
    let (rows, cols) = t.dims2();
    if let Some(c) = counts {
        if c.len() != rows {
            return Err(Error::Config(format!(
                "{} contributor counts for {} rows",
                c.len(),
                rows
            )));
        }
    }
    clip_rows(t, cfg.clip_norm);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
    for r in 0..rows {
        let sensitivity = match (cfg.per_count_sensitivity, counts) {
            (true, Some(c)) if c[r] > 0 => 2.0 * cfg.clip_norm / c[r] as f64,
            _ => 2.0 * cfg.clip_norm,
        };
        let sigma = gaussian_sigma(cfg.epsilon, cfg.delta, sensitivity);
        let start = r * cols;
        let row = &mut t.values_mut()[start..start + cols];
        for x in row.iter_mut() {
            *x += sigma * normal.sample(rng);
        }
    }
    Ok(())
}

/// Convenience wrapper: number of noise draws a perturbed tensor consumes
/// from the stream. Useful for reasoning about stream alignment in tests.
pub fn noise_draws(t: &Tensor) -> usize {
    t.element_count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn sigma_matches_the_analytic_calibration() {
        // sqrt(2 ln(1.25 / 1e-5)) with unit sensitivity and epsilon.
        let sigma = gaussian_sigma(1.0, 1e-5, 1.0);
        assert!((sigma - 4.844805).abs() < 1e-6, "{sigma}");
        // Scale linearity in sensitivity, inverse in epsilon.
        assert!((gaussian_sigma(1.0, 1e-5, 2.0) - 2.0 * sigma).abs() < 1e-12);
        assert!((gaussian_sigma(0.5, 1e-5, 1.0) - 2.0 * sigma).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_norms_and_is_bitwise_idempotent() {
        let mut t = Tensor::from_values(
            &[3, 4],
            vec![
                5.0, 0.0, 0.0, 0.0, //
                0.3, 0.1, -0.2, 0.05, //
                -2.0, 2.0, -2.0, 2.0,
            ],
        )
        .unwrap();
        clip_rows(&mut t, 1.0);
        for r in 0..3 {
            let norm: f64 = t.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm <= 1.0, "row {r} norm {norm}");
        }
        // Row 1 was already inside the ball and must be untouched.
        assert_eq!(t.row_slice(1), &[0.3, 0.1, -0.2, 0.05]);
        let bits: Vec<u64> = t.values().iter().map(|v| v.to_bits()).collect();
        clip_rows(&mut t, 1.0);
        let bits2: Vec<u64> = t.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, bits2);
    }

    #[test]
    fn perturbation_is_deterministic_per_seed() {
        let cfg = DpConfig {
            enabled: true,
            ..DpConfig::default()
        };
        let base = Tensor::from_values(&[2, 3], vec![0.5; 6]).unwrap();
        let mut a = base.clone();
        let mut b = base.clone();
        clip_and_perturb(&mut a, &cfg, None, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        clip_and_perturb(&mut b, &cfg, None, &mut ChaCha8Rng::seed_from_u64(21)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let mut c = base.clone();
        clip_and_perturb(&mut c, &cfg, None, &mut ChaCha8Rng::seed_from_u64(22)).unwrap();
        assert!(a.max_abs_diff(&c) > 0.0);
    }

    #[test]
    fn empirical_noise_scale_matches_sigma() {
        let cfg = DpConfig {
            enabled: true,
            ..DpConfig::default()
        };
        let n = 10_000;
        let mut t = Tensor::zeros(&[n, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        clip_and_perturb(&mut t, &cfg, None, &mut rng).unwrap();
        let mean: f64 = t.values().iter().sum::<f64>() / n as f64;
        let var: f64 =
            t.values().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let sigma = gaussian_sigma(cfg.epsilon, cfg.delta, 2.0 * cfg.clip_norm);
        let rel = (var.sqrt() - sigma).abs() / sigma;
        assert!(rel < 0.03, "std {} vs sigma {sigma}", var.sqrt());
    }

    #[test]
    fn per_count_mode_scales_noise_down() {
        let cfg_flat = DpConfig {
            enabled: true,
            ..DpConfig::default()
        };
        let cfg_mean = DpConfig {
            per_count_sensitivity: true,
            ..cfg_flat
        };
        let sample_spread = |cfg: &DpConfig, counts: Option<&[usize]>| -> f64 {
            let mut t = Tensor::zeros(&[400, 1]);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            clip_and_perturb(&mut t, cfg, counts, &mut rng).unwrap();
            t.values().iter().map(|x| x * x).sum::<f64>() / 400.0
        };
        let counts = vec![50usize; 400];
        let flat = sample_spread(&cfg_flat, None);
        let scaled = sample_spread(&cfg_mean, Some(&counts));
        // Sensitivity shrinks by 50x, variance by 2500x.
        assert!(scaled < flat / 1000.0, "flat {flat} scaled {scaled}");
    }

    #[test]
    fn disabled_config_is_a_no_op() {
        let cfg = DpConfig::default();
        let mut t = Tensor::from_values(&[1, 2], vec![9.0, -9.0]).unwrap();
        clip_and_perturb(&mut t, &cfg, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(t.values(), &[9.0, -9.0]);
    }

    #[test]
    fn invalid_epsilon_rejected() {
        let cfg = DpConfig {
            enabled: true,
            epsilon: 3.0,
            ..DpConfig::default()
        };
        let mut t = Tensor::zeros(&[1, 1]);
        assert!(clip_and_perturb(&mut t, &cfg, None, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }
}
