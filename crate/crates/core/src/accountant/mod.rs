//! Privacy accounting by Rényi-DP composition.
//!
//! Each training step is one invocation of the Poisson-subsampled Gaussian
//! mechanism. Its RDP curve `ε(α)` over a grid of orders is computed once per
//! distinct `(q, σ)` and composed linearly; [`RdpLedger::to_dp`] converts the
//! composed curve to `(ε, δ)` by minimising over the grid.

mod quadrature;
mod rdp;

pub use quadrature::{integrate, Quadrature};
pub use rdp::{gaussian_rdp, sgm_rdp};

use crate::error::{Error, Result};

pub const DEFAULT_ORDERS: [f64; 15] = [
    1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0,
];

#[derive(Debug, Clone, PartialEq)]
struct Mechanism {
    q: f64,
    sigma: f64,
    count: u64,
    per_step: Vec<f64>,
}

/// Composed RDP of a sequence of subsampled-Gaussian steps.
///
/// Steps are tallied per distinct `(q, σ)` and the accumulated curve is
/// `Σ count · ε_step(α)`, so `T` identical steps give exactly `T · ε_step(α)`
/// and the result is independent of step order.
#[derive(Debug, Clone, PartialEq)]
pub struct RdpLedger {
    orders: Vec<f64>,
    mechanisms: Vec<Mechanism>,
    steps: u64,
}

/// `(ε, δ)` guarantee read off a ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyReport {
    /// In nats.
    pub epsilon: f64,
    pub delta: f64,
    pub best_order: f64,
    pub steps: u64,
}

impl Default for RdpLedger {
    fn default() -> Self {
        Self::new(DEFAULT_ORDERS.to_vec()).expect("default orders are valid")
    }
}

impl RdpLedger {
    /// Orders must be finite, > 1 and strictly increasing. An empty grid is
    /// accepted here but cannot be converted by [`RdpLedger::to_dp`].
    pub fn new(orders: Vec<f64>) -> Result<Self> {
        if let Some(bad) = orders.iter().find(|a| !(a.is_finite() && **a > 1.0)) {
            return Err(Error::Config(format!("order {bad} must be > 1")));
        }
        if orders.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("orders must be strictly increasing".into()));
        }
        Ok(Self {
            orders,
            mechanisms: Vec::new(),
            steps: 0,
        })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Records one step of the subsampled Gaussian mechanism.
    pub fn account_step(&mut self, q: f64, sigma: f64) -> Result<()> {
        self.account_steps(q, sigma, 1)
    }

    /// Records `count` identical steps.
    pub fn account_steps(&mut self, q: f64, sigma: f64, count: u64) -> Result<()> {
        if let Some(m) = self
            .mechanisms
            .iter_mut()
            .find(|m| m.q.to_bits() == q.to_bits() && m.sigma.to_bits() == sigma.to_bits())
        {
            m.count += count;
        } else {
            let per_step = self
                .orders
                .iter()
                .map(|&a| sgm_rdp(q, sigma, a))
                .collect::<Result<Vec<_>>>()?;
            self.mechanisms.push(Mechanism {
                q,
                sigma,
                count,
                per_step,
            });
        }
        self.steps += count;
        Ok(())
    }

    /// Accumulated `ε(α)` per order, in nats.
    pub fn eps_rdp(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.orders.len()];
        for m in &self.mechanisms {
            for (t, e) in total.iter_mut().zip(&m.per_step) {
                *t += m.count as f64 * e;
            }
        }
        total
    }

    /// `ε = min_α [ε(α) + ln(1/δ)/(α−1)]`, smallest α on ties.
    pub fn to_dp(&self, delta: f64) -> Result<PrivacyReport> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Input(format!("delta {delta} outside (0, 1)")));
        }
        if self.orders.is_empty() {
            return Err(Error::Config("empty order grid".into()));
        }
        let log_inv_delta = -delta.ln();
        let (epsilon, best_order) = self
            .orders
            .iter()
            .zip(self.eps_rdp())
            .map(|(&a, e)| (e + log_inv_delta / (a - 1.0), a))
            .fold(
                (f64::INFINITY, f64::NAN),
                |best, cand| if cand.0 < best.0 { cand } else { best },
            );
        Ok(PrivacyReport {
            epsilon,
            delta,
            best_order,
            steps: self.steps,
        })
    }
}

/// Basic composition: budgets of sequentially applied mechanisms add.
pub fn basic_composition(epsilons: &[f64]) -> Result<f64> {
    if let Some(bad) = epsilons.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::Input(format!("negative or NaN budget {bad}")));
    }
    Ok(epsilons.iter().sum())
}

/// Privacy loss `ln(p_x / p_y)` of observing an outcome with density `p_x`
/// under one dataset and `p_y` under its neighbour.
pub fn privacy_loss(p_x: f64, p_y: f64) -> Result<f64> {
    if !(p_x > 0.0 && p_y > 0.0) {
        return Err(Error::Input(format!("densities must be positive, got {p_x} and {p_y}")));
    }
    Ok(p_x.ln() - p_y.ln())
}
