//! Gradient perturbation: per-sample L2 clipping, Gaussian noise on the
//! summed lot gradient, and Poisson lot sampling.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::PerSampleGrads;
use crate::rng::Stream;
use crate::tensor::l2_norm;

/// Configuration of the subsampled Gaussian mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    /// σ: noise standard deviation in units of the clip norm.
    pub noise_multiplier: f64,
    /// C: per-sample L2 bound.
    pub clip_norm: f64,
    /// q: Poisson inclusion probability.
    pub sample_rate: f64,
    /// δ used when reporting (ε, δ).
    pub target_delta: f64,
}

impl PrivacyParams {
    pub fn new(noise_multiplier: f64, clip_norm: f64, sample_rate: f64, target_delta: f64) -> Result<Self> {
        let p = Self {
            noise_multiplier,
            clip_norm,
            sample_rate,
            target_delta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_multiplier > 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "noise multiplier {} must be > 0",
                self.noise_multiplier
            )));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip norm {} must be > 0", self.clip_norm)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate <= 1.0) {
            return Err(Error::Config(format!(
                "sample rate {} outside (0, 1]",
                self.sample_rate
            )));
        }
        if !(self.target_delta > 0.0 && self.target_delta < 1.0) {
            return Err(Error::Config(format!("delta {} outside (0, 1)", self.target_delta)));
        }
        Ok(())
    }
}

/// Dedicated Gaussian noise stream (ChaCha20, counter-based).
#[derive(Debug, Clone)]
pub struct NoiseRng(ChaCha20Rng);

impl NoiseRng {
    pub fn new(seed: u64) -> Self {
        NoiseRng(crate::rng::stream(seed, Stream::Noise))
    }

    pub fn from_rng(rng: ChaCha20Rng) -> Self {
        NoiseRng(rng)
    }

    pub fn gaussian(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }
}

/// Scales each row to `g · min(1, C/‖g‖₂)` in place.
pub fn clip_rows(grads: &mut PerSampleGrads, clip_norm: f64) -> Result<()> {
    if !(clip_norm > 0.0) {
        return Err(Error::Config(format!("clip norm {clip_norm} must be > 0")));
    }
    grads.par_rows_mut().for_each(|row| {
        let norm = l2_norm(row);
        if norm > clip_norm {
            let scale = clip_norm / norm;
            row.iter_mut().for_each(|v| *v *= scale);
        }
    });
    Ok(())
}

/// `(Σᵢ gᵢ + 𝒩(0, σ²C² I)) / L` with `L` the number of rows.
///
/// Returns `None` for an empty lot: the caller skips the update but still
/// accounts the step.
pub fn noisy_aggregate(clipped: &PerSampleGrads, sigma: f64, clip_norm: f64, rng: &mut NoiseRng) -> Option<Vec<f64>> {
    if clipped.is_empty() {
        return None;
    }
    let lot = clipped.rows() as f64;
    let std = sigma * clip_norm;
    let mut sum = clipped.sum();
    for v in &mut sum {
        *v = (*v + std * rng.gaussian()) / lot;
    }
    Some(sum)
}

/// Indices in `0..n` each kept independently with probability `q`, ascending.
pub fn poisson_sample<R: Rng + ?Sized>(n: usize, q: f64, rng: &mut R) -> Vec<usize> {
    if q >= 1.0 {
        return (0..n).collect();
    }
    (0..n).filter(|_| rng.random::<f64>() < q).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn grads(rows: &[&[f64]]) -> PerSampleGrads {
        PerSampleGrads::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn clip_leaves_small_rows() {
        let mut g = grads(&[&[0.3, 0.4]]);
        clip_rows(&mut g, 1.0).unwrap();
        assert_eq!(g.row(0), &[0.3, 0.4]);
    }

    #[test]
    fn clip_halves_double_norm_row() {
        let mut g = grads(&[&[1.2, 1.6]]);
        clip_rows(&mut g, 1.0).unwrap();
        assert!((g.row(0)[0] - 0.6).abs() < 1e-15 && (g.row(0)[1] - 0.8).abs() < 1e-15);
        assert!((g.norms()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn clip_zero_row() {
        let mut g = grads(&[&[0.0, 0.0, 0.0]]);
        clip_rows(&mut g, 0.5).unwrap();
        assert_eq!(g.row(0), &[0.0; 3]);
    }

    #[test]
    fn clip_requires_positive_norm() {
        let mut g = grads(&[&[1.0]]);
        assert!(matches!(clip_rows(&mut g, 0.0), Err(Error::Config(_))));
        assert!(matches!(clip_rows(&mut g, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn tiny_sigma_recovers_clipped_mean() {
        let g = grads(&[&[1.0, 0.0], &[0.0, -1.0], &[0.5, 0.5]]);
        let out = noisy_aggregate(&g, 1e-14, 1.0, &mut NoiseRng::new(1)).unwrap();
        assert!((out[0] - 0.5).abs() < 1e-12 && (out[1] + 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn empty_lot_skips() {
        let g = PerSampleGrads::zeros(0, 4);
        assert!(noisy_aggregate(&g, 1.0, 1.0, &mut NoiseRng::new(1)).is_none());
    }

    #[test]
    fn aggregate_is_reproducible() {
        let g = grads(&[&[0.1, 0.2, 0.3]]);
        let a = noisy_aggregate(&g, 1.1, 1.0, &mut NoiseRng::new(5)).unwrap();
        let b = noisy_aggregate(&g, 1.1, 1.0, &mut NoiseRng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_all_at_rate_one() {
        let mut r = rng::stream(0, Stream::Sampling);
        assert_eq!(poisson_sample(7, 1.0, &mut r), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = poisson_sample(5000, 0.05, &mut rng::stream(3, Stream::Sampling));
        let b = poisson_sample(5000, 0.05, &mut rng::stream(3, Stream::Sampling));
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn params_validation() {
        assert!(PrivacyParams::new(1.1, 1.0, 0.01, 1e-5).is_ok());
        assert!(PrivacyParams::new(0.0, 1.0, 0.01, 1e-5).is_err());
        assert!(PrivacyParams::new(1.0, 0.0, 0.01, 1e-5).is_err());
        assert!(PrivacyParams::new(1.0, 1.0, 0.0, 1e-5).is_err());
        assert!(PrivacyParams::new(1.0, 1.0, 1.5, 1e-5).is_err());
        assert!(PrivacyParams::new(1.0, 1.0, 1.0, 1.0).is_err());
    }
}
