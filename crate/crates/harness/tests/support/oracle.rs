//! Reference Rényi divergences by adaptive Gauss–Legendre quadrature of the
//! defining integral, written independently of the engine's accountant.

use std::f64::consts::PI;

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev-like starting guess, refined by Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

pub struct Rule {
    x: Vec<f64>,
    w: Vec<f64>,
}

impl Rule {
    pub fn new(n: usize) -> Self {
        let (x, w) = gauss_legendre(n);
        Rule { x, w }
    }

    fn panel(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        h * self.x.iter().zip(&self.w).map(|(x, w)| w * f(c + h * x)).sum::<f64>()
    }

    /// Recursive bisection until a panel and its two halves agree to `tol`, or
    /// to rounding level relative to the panel value.
    fn adapt(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (l, r) = (self.panel(f, a, m), self.panel(f, m, b));
        if (l + r - whole).abs() <= tol.max(1e-14 * (l + r).abs()) || depth == 0 {
            l + r
        } else {
            self.adapt(f, a, m, l, 0.5 * tol, depth - 1) + self.adapt(f, m, b, r, 0.5 * tol, depth - 1)
        }
    }

    pub fn integrate(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, tol: f64) -> f64 {
        let width = (b - a) / panels as f64;
        (0..panels)
            .map(|i| {
                let lo = a + width * i as f64;
                let hi = lo + width;
                let whole = self.panel(f, lo, hi);
                self.adapt(f, lo, hi, whole, tol / panels as f64, 12)
            })
            .sum()
    }
}

/// `ln(1 − q + q·e^u)` without overflow.
fn log_mix(q: f64, u: f64) -> f64 {
    if q == 1.0 {
        u
    } else if u > 0.0 {
        u + (q + (1.0 - q) * (-u).exp()).ln()
    } else {
        (q * u.exp_m1()).ln_1p()
    }
}

/// ε(α) of one Poisson-subsampled Gaussian step, from
/// `A_α = ∫ 𝒩(z; 0, σ²) · (1 − q + q·exp((2z − 1)/(2σ²)))^α dz`.
pub fn sgm_rdp(q: f64, sigma: f64, alpha: f64) -> f64 {
    let var = sigma * sigma;
    let log_norm = -(sigma * (2.0 * PI).sqrt()).ln();
    let log_f = |z: f64| log_norm - z * z / (2.0 * var) + alpha * log_mix(q, (2.0 * z - 1.0) / (2.0 * var));
    let (lo, hi) = (-14.0 * sigma - 1.0, alpha + 14.0 * sigma + 1.0);
    let grid = 20_000;
    let peak = (0..=grid)
        .map(|i| log_f(lo + (hi - lo) * i as f64 / grid as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let f = move |z: f64| (log_f(z) - peak).exp();
    let panels = ((hi - lo) / (0.25 * sigma)).ceil() as usize;
    let integral = Rule::new(20).integrate(&f, lo, hi, panels, 1e-15);
    (peak + integral.ln()) / (alpha - 1.0)
}
