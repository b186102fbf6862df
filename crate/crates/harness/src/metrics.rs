//! Per-step metrics CSV and the key=value run summary.

use std::fs::{self, File};
use std::path::Path;

use crate::error::{HarnessError, Result};

pub const PRIVATE_COLUMNS: [&str; 8] = [
    "epoch",
    "step",
    "lr",
    "momentum",
    "train_loss",
    "val_accuracy",
    "epsilon",
    "best_order",
];

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONFIG_FILE: &str = "config.txt";

/// One optimizer step. Validation fields are set only where the model was
/// evaluated (epoch boundaries by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRow {
    pub epoch: u32,
    pub step: u64,
    pub lr: f64,
    pub momentum: f64,
    /// `None` when the Poisson lot was empty.
    pub train_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub epsilon: Option<f64>,
    pub best_order: Option<f64>,
}

/// State at the end of an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub step: u64,
    pub lr: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub epsilon: Option<f64>,
    pub best_order: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes rows as they are produced, flushing at each epoch boundary.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    private: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, private: bool) -> Result<Self> {
        let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        let cols = if private {
            &PRIVATE_COLUMNS[..]
        } else {
            &PRIVATE_COLUMNS[..6]
        };
        inner.write_record(cols)?;
        Ok(Self { inner, private })
    }

    pub fn write(&mut self, row: &StepRow) -> Result<()> {
        let mut rec = vec![
            row.epoch.to_string(),
            row.step.to_string(),
            row.lr.to_string(),
            row.momentum.to_string(),
            opt(row.train_loss),
            opt(row.val_accuracy),
        ];
        if self.private {
            rec.push(opt(row.epsilon));
            rec.push(opt(row.best_order));
        }
        self.inner.write_record(&rec)?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| HarnessError::Csv(e.into()))
    }
}

/// Ordered key=value pairs written as `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        let mut s = Summary::default();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                s.set(k.trim(), v.trim());
            }
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| HarnessError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(Summary::parse(&text))
    }
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<StepRow>,
    pub epochs: Vec<EpochRecord>,
    pub summary: Summary,
}

impl RunMetrics {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.val_accuracy)
    }

    pub fn final_epsilon(&self) -> Option<f64> {
        self.epochs.last().and_then(|e| e.epsilon)
    }

    /// First epoch whose validation accuracy reaches `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<u32> {
        self.epochs.iter().find(|e| e.val_accuracy >= target).map(|e| e.epoch)
    }
}

/// `1 − private/baseline`: the fraction of baseline accuracy lost.
pub fn accuracy_loss(private_acc: f64, baseline_acc: f64) -> Result<f64> {
    if !(baseline_acc > 0.0) {
        return Err(dpsgd_core::Error::Input(format!("baseline accuracy {baseline_acc} must be > 0")).into());
    }
    Ok(1.0 - private_acc / baseline_acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_loss_values() {
        assert_eq!(accuracy_loss(0.9, 0.9).unwrap(), 0.0);
        assert!((accuracy_loss(0.927, 0.991).unwrap() - 0.0646).abs() < 1e-4);
        let private: f64 = 0.991 * (1.0 - 0.098);
        assert!((private - 0.8939).abs() < 1e-4);
        assert!(accuracy_loss(0.5, 0.0).is_err());
    }

    #[test]
    fn summary_round_trip_and_override() {
        let mut s = Summary::default();
        s.set("a", 1);
        s.set("label", "reference, not paper");
        s.set("a", 2.5);
        let back = Summary::parse(&s.render());
        assert_eq!(back, s);
        assert_eq!(back.get_f64("a"), Some(2.5));
        assert_eq!(s.render(), "a=2.5\nlabel=reference, not paper\n");
    }

    #[test]
    fn writer_columns_follow_mode() {
        let dir = tempfile::tempdir().unwrap();
        let row = StepRow {
            epoch: 1,
            step: 1,
            lr: 0.5,
            momentum: 0.9,
            train_loss: None,
            val_accuracy: Some(0.25),
            epsilon: Some(0.1),
            best_order: Some(8.0),
        };
        for (private, expect) in [
            (
                true,
                "epoch,step,lr,momentum,train_loss,val_accuracy,epsilon,best_order\n1,1,0.5,0.9,,0.25,0.1,8\n",
            ),
            (
                false,
                "epoch,step,lr,momentum,train_loss,val_accuracy\n1,1,0.5,0.9,,0.25\n",
            ),
        ] {
            let path = dir.path().join("m.csv");
            let mut w = MetricsWriter::create(&path, private).unwrap();
            w.write(&row).unwrap();
            w.flush().unwrap();
            drop(w);
            assert_eq!(fs::read_to_string(&path).unwrap(), expect);
        }
    }
}
