//! Rényi-DP of the Gaussian and Poisson-subsampled Gaussian mechanisms
//! (sensitivity 1, noise multiplier σ).
//!
//! For the subsampled mechanism the order-α divergence between
//! `μ = (1−q)𝒩(0,σ²) + q𝒩(1,σ²)` and `μ₀ = 𝒩(0,σ²)` is
//! `ε(α) = ln A_α / (α−1)` with `A_α = E_{z∼μ₀}[(1 + q(r(z) − 1))^α]` and
//! likelihood ratio `r(z) = exp((2z − 1)/(2σ²))`.
//!
//! Since `E_{μ₀}[r − 1] = 0`, `A_α − 1 = E_{μ₀}[(1+x)^α − 1 − αx]` with
//! `x = q(r − 1)`; the bracket is non-negative for α > 1, which keeps both
//! evaluation routes free of cancellation when `A_α` is close to 1.

use std::f64::consts::PI;

use super::quadrature;
use crate::error::{Error, Result};

/// Largest order evaluated through the binomial expansion; above this the
/// quadrature route is used for integers too.
const MAX_BINOMIAL_ORDER: f64 = 10_000.0;

fn check_sigma_alpha(sigma: f64, alpha: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("noise multiplier {sigma} must be > 0")));
    }
    if !(alpha > 1.0 && alpha.is_finite()) {
        return Err(Error::Input(format!("order {alpha} must be > 1")));
    }
    Ok(())
}

/// RDP of the Gaussian mechanism: `α / (2σ²)`.
pub fn gaussian_rdp(sigma: f64, alpha: f64) -> Result<f64> {
    check_sigma_alpha(sigma, alpha)?;
    Ok(alpha / (2.0 * sigma * sigma))
}

/// RDP at order α of one step of the Poisson-subsampled Gaussian mechanism.
///
/// Integer orders use the binomial expansion of `A_α` in log space;
/// fractional orders integrate the divergence numerically.
pub fn sgm_rdp(q: f64, sigma: f64, alpha: f64) -> Result<f64> {
    check_sigma_alpha(sigma, alpha)?;
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Input(format!("sample rate {q} outside [0, 1]")));
    }
    if q == 0.0 {
        return Ok(0.0);
    }
    if q == 1.0 {
        return gaussian_rdp(sigma, alpha);
    }
    let log_a = if alpha.fract() == 0.0 && alpha <= MAX_BINOMIAL_ORDER {
        log_a_integer(q, sigma, alpha as u64)
    } else {
        log_a_quadrature(q, sigma, alpha)
    };
    Ok((log_a / (alpha - 1.0)).max(0.0))
}

/// `ln(1 + e^l)` without overflow.
fn log1p_exp(l: f64) -> f64 {
    if l > 0.0 {
        l + (-l).exp().ln_1p()
    } else {
        l.exp().ln_1p()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `ln(e^y − 1)` for `y > 0`.
fn log_expm1(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// `ln A_α` for integer α ≥ 2:
/// `A_α − 1 = Σ_{k=2}^{α} C(α,k) (1−q)^{α−k} q^k (e^{k(k−1)/(2σ²)} − 1)`.
fn log_a_integer(q: f64, sigma: f64, alpha: u64) -> f64 {
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let two_var = 2.0 * sigma * sigma;
    let a = alpha as f64;
    let mut ln_binom = a.ln(); // ln C(α, 1)
    let mut terms = Vec::with_capacity(alpha as usize);
    for k in 2..=alpha {
        let kf = k as f64;
        ln_binom += ((a - kf + 1.0) / kf).ln();
        let exponent = kf * (kf - 1.0) / two_var;
        terms.push(ln_binom + (a - kf) * ln_1mq + kf * ln_q + log_expm1(exponent));
    }
    log1p_exp(log_sum_exp(&terms))
}

/// `ln((1+x)^α − 1 − αx)` for `x > −1`, α > 1.
pub(crate) fn log_bernoulli_excess(x: f64, alpha: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    let ax = alpha * x;
    if x.abs() < 1e-3 && ax.abs() < 1e-2 {
        // Σ_{j≥2} C(α,j) x^j; terms shrink faster than (αx)^j / j!.
        let mut coef = alpha; // C(α,1)
        let mut power = x;
        let mut sum = 0.0;
        for j in 2..=8 {
            let jf = j as f64;
            coef *= (alpha - jf + 1.0) / jf;
            power *= x;
            sum += coef * power;
        }
        return sum.ln();
    }
    let a = alpha * x.ln_1p();
    if a > 40.0 {
        return a + (-(1.0 + ax) * (-a).exp()).ln_1p();
    }
    let h = a.exp_m1() - ax;
    if h > 0.0 {
        h.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `ln A_α` by adaptive quadrature, valid for any real α > 1.
fn log_a_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    let var = sigma * sigma;
    let log_norm = -(sigma * (2.0 * PI).sqrt()).ln();
    let log_f = |z: f64| {
        let x = q * ((2.0 * z - 1.0) / (2.0 * var)).exp_m1();
        log_norm - z * z / (2.0 * var) + log_bernoulli_excess(x, alpha)
    };
    // Mass lies between the base Gaussian near 0 and the k = α component near z = α.
    let lo = -12.0 * sigma;
    let hi = alpha.max(1.0) + 12.0 * sigma;
    let grid = 4096;
    let step = (hi - lo) / grid as f64;
    let peak = (0..=grid)
        .map(|i| log_f(lo + step * i as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return 0.0;
    }
    let panels = (((hi - lo) / (0.5 * sigma)).ceil() as usize).clamp(16, 4096);
    let result = quadrature::integrate(|z| (log_f(z) - peak).exp(), lo, hi, panels, 1e-12, 200_000);
    if result.value <= 0.0 {
        return 0.0;
    }
    log1p_exp(peak + result.value.ln())
}
