//! Joins run summaries into an accuracy-loss vs ε table.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::metrics::{accuracy_loss, Summary, SUMMARY_FILE};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub mode: String,
    pub schedule: String,
    pub epochs: String,
    pub epsilon: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub accuracy_loss: Option<f64>,
}

/// Summaries in `dir` and its immediate subdirectories, sorted by path.
fn find_summaries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let direct = dir.join(SUMMARY_FILE);
    if direct.is_file() {
        found.push(direct);
    }
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        let candidate = path.join(SUMMARY_FILE);
        if path.is_dir() && candidate.is_file() {
            found.push(candidate);
        }
    }
    found.sort();
    Ok(found)
}

/// One row per completed run; accuracy loss is taken against the first
/// non-private run found.
pub fn collect(dir: &Path) -> Result<Vec<ReportRow>> {
    let mut summaries = Vec::new();
    for path in find_summaries(dir)? {
        let s = Summary::load(&path)?;
        if s.get("status") == Some("completed") {
            let run = path
                .parent()
                .and_then(|p| p.file_name())
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            summaries.push((run, s));
        }
    }
    let baseline = summaries
        .iter()
        .find(|(_, s)| s.get("mode") == Some("non_private"))
        .and_then(|(_, s)| s.get_f64("final_val_accuracy"));
    summaries
        .into_iter()
        .map(|(run, s)| {
            let acc = s.get_f64("final_val_accuracy");
            let loss = match (acc, baseline) {
                (Some(a), Some(b)) => Some(accuracy_loss(a, b)?),
                _ => None,
            };
            Ok(ReportRow {
                run,
                mode: s.get("mode").unwrap_or_default().to_string(),
                schedule: s.get("schedule").unwrap_or_default().to_string(),
                epochs: s.get("epochs").unwrap_or_default().to_string(),
                epsilon: s.get_f64("epsilon"),
                val_accuracy: acc,
                accuracy_loss: loss,
            })
        })
        .collect()
}

pub fn render_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "run",
        "mode",
        "schedule",
        "epochs",
        "epsilon",
        "val_accuracy",
        "accuracy_loss",
    ])?;
    let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.run.clone(),
            r.mode.clone(),
            r.schedule.clone(),
            r.epochs.clone(),
            f(r.epsilon),
            f(r.val_accuracy),
            f(r.accuracy_loss),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::create_dir_all(dir.join(name)).unwrap();
        fs::write(dir.join(name).join(SUMMARY_FILE), body).unwrap();
    }

    #[test]
    fn joins_against_baseline() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "b",
            "mode=non_private\nstatus=completed\nfinal_val_accuracy=0.8\nschedule=plateau\nepochs=5\n",
        );
        write(
            tmp.path(),
            "a",
            "mode=private\nstatus=completed\nfinal_val_accuracy=0.6\nepsilon=1.5\nschedule=one_cycle\nepochs=2\n",
        );
        write(tmp.path(), "c", "mode=private\nstatus=aborted\n");
        let rows = collect(tmp.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].run, "a");
        assert!((rows[0].accuracy_loss.unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(rows[1].accuracy_loss, Some(0.0));
        let csv = render_csv(&rows).unwrap();
        assert!(csv.starts_with(
            "run,mode,schedule,epochs,epsilon,val_accuracy,accuracy_loss\na,private,one_cycle,2,1.5,0.6,"
        ));
    }

    #[test]
    fn no_baseline_leaves_loss_blank() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            "a",
            "mode=private\nstatus=completed\nfinal_val_accuracy=0.6\n",
        );
        assert_eq!(collect(tmp.path()).unwrap()[0].accuracy_loss, None);
    }
}
