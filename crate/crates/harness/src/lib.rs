//! Experiment harness for the DP-SGD engine: run configuration, the training
//! loop, metrics persistence, the paired experiments and run reports.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod train;

use dpsgd_core::accountant::RdpLedger;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
pub use metrics::{accuracy_loss, RunMetrics};
pub use train::{load_data, train_run};

/// One row of the `account` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccountRow {
    pub step: u64,
    pub epsilon: f64,
    pub best_order: f64,
}

/// `(ε, δ)` after `steps` subsampled-Gaussian steps; with `per_step`, one
/// row for every prefix `1..=steps`, otherwise only the final row.
pub fn account(sigma: f64, q: f64, delta: f64, steps: u64, per_step: bool) -> Result<Vec<AccountRow>> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(HarnessError::Config(format!("--q {q} outside (0, 1]")));
    }
    let mut ledger = RdpLedger::default();
    let row = |l: &RdpLedger| -> Result<AccountRow> {
        let r = l.to_dp(delta)?;
        Ok(AccountRow {
            step: r.steps,
            epsilon: r.epsilon,
            best_order: r.best_order,
        })
    };
    if !per_step {
        ledger.account_steps(q, sigma, steps)?;
        return Ok(vec![row(&ledger)?]);
    }
    let mut rows = Vec::with_capacity(steps as usize);
    for _ in 0..steps {
        ledger.account_step(q, sigma)?;
        rows.push(row(&ledger)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_step_table_ends_at_total() {
        let rows = account(1.1, 0.01, 1e-5, 50, true).unwrap();
        assert_eq!(rows.len(), 50);
        assert!(rows.windows(2).all(|w| w[0].epsilon <= w[1].epsilon));
        assert_eq!(rows[49], account(1.1, 0.01, 1e-5, 50, false).unwrap()[0]);
    }

    #[test]
    fn bad_arguments() {
        assert_eq!(account(1.1, 0.0, 1e-5, 1, false).unwrap_err().exit_code(), 2);
        assert_eq!(account(0.0, 0.1, 1e-5, 1, false).unwrap_err().exit_code(), 2);
        assert_eq!(account(1.0, 0.1, 0.0, 1, false).unwrap_err().exit_code(), 2);
    }
}
