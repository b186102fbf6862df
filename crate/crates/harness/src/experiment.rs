//! The three paired experiments and their figure CSVs.
//!
//! | id | runs | outputs |
//! |----|------|---------|
//! | 1 | one-cycle DP, plateau DP | `fig1_accuracy.csv` (accuracy per epoch), `fig2_lr.csv` (rate per step) |
//! | 2 | baseline, one-cycle DP, plateau DP | `fig3_accuracy_loss.csv` (accuracy loss vs ε) |
//! | 3 | one-cycle DP, plateau DP | `fig4_epsilon.csv` (ε per epoch) |

use std::fs;
use std::path::{Path, PathBuf};

use dpsgd_core::dp::PrivacyParams;
use dpsgd_core::schedule::{OneCycleSpec, PlateauSpec};

use crate::config::{DataConfig, RunConfig, ScheduleConfig, TrainMode};
use crate::error::{HarnessError, Result};
use crate::metrics::{accuracy_loss, RunMetrics, SUMMARY_FILE};
use crate::train::{train_run, OutputSpec, TrainingData};

/// Peak rate of the reference one-cycle schedule.
pub const REFERENCE_MAX_LR: f64 = 1.0;
/// Starting rate of the reference plateau schedule.
pub const REFERENCE_PLATEAU_LR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Baseline,
    OneCycleDp,
    PlateauDp,
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Baseline => "baseline",
            Model::OneCycleDp => "one_cycle_dp",
            Model::PlateauDp => "plateau_dp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochBudget {
    pub baseline: u32,
    pub one_cycle: u32,
    pub plateau: u32,
}

impl Default for EpochBudget {
    fn default() -> Self {
        Self {
            baseline: 5,
            one_cycle: 2,
            plateau: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub data: DataConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub epochs: EpochBudget,
    /// Overrides the reference sampling rate of the private runs.
    pub sample_rate: Option<f64>,
    /// Multiplies the learning rates of both private schedules.
    pub lr_scale: f64,
}

/// Reference configuration of one of the compared models.
pub fn reference_config(model: Model, opts: &ExperimentOptions) -> RunConfig {
    let private = TrainMode::Private(PrivacyParams {
        noise_multiplier: 1.1,
        clip_norm: 1.0,
        sample_rate: opts.sample_rate.unwrap_or(0.01),
        target_delta: 1e-5,
    });
    let (mode, schedule, epochs) = match model {
        Model::Baseline => (
            TrainMode::NonPrivate { batch_size: 64 },
            ScheduleConfig::Plateau(PlateauSpec::new(REFERENCE_PLATEAU_LR)),
            opts.epochs.baseline,
        ),
        Model::OneCycleDp => (
            private,
            ScheduleConfig::OneCycle(OneCycleSpec::new(REFERENCE_MAX_LR * opts.lr_scale, 0)),
            opts.epochs.one_cycle,
        ),
        Model::PlateauDp => (
            private,
            ScheduleConfig::Plateau(PlateauSpec::new(REFERENCE_PLATEAU_LR * opts.lr_scale)),
            opts.epochs.plateau,
        ),
    };
    let mut cfg = RunConfig::default();
    cfg.name = model.name().into();
    cfg.seed = opts.seed;
    cfg.epochs = epochs;
    cfg.mode = mode;
    cfg.schedule = schedule;
    cfg.data = opts.data.clone();
    cfg
}

pub fn models(id: u32) -> Result<&'static [Model]> {
    match id {
        1 | 3 => Ok(&[Model::OneCycleDp, Model::PlateauDp]),
        2 => Ok(&[Model::Baseline, Model::OneCycleDp, Model::PlateauDp]),
        _ => Err(HarnessError::Config(format!(
            "unknown experiment id {id}; expected 1, 2 or 3"
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub runs: Vec<(Model, RunMetrics)>,
    pub files: Vec<PathBuf>,
}

impl ExperimentOutput {
    pub fn run(&self, model: Model) -> Option<&RunMetrics> {
        self.runs.iter().find(|(m, _)| *m == model).map(|(_, r)| r)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes a table with one row per index `1..=len` and one column per run.
fn write_series(path: &Path, index: &str, series: &[(&str, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![index.to_string()];
    header.extend(series.iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    let len = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    for i in 0..len {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(series.iter().map(|(_, v)| opt(v.get(i).copied())));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Runs experiment `id` on preloaded data and writes its figure CSVs under
/// `opts.out/exp{id}`.
pub fn run_experiment(id: u32, opts: &ExperimentOptions, data: &TrainingData) -> Result<ExperimentOutput> {
    let models = models(id)?;
    let dir = opts.out.join(format!("exp{id}"));
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let mut runs = Vec::new();
    for &model in models {
        let cfg = reference_config(model, opts);
        let out = OutputSpec {
            dir: dir.join(model.name()),
            overrides: Vec::new(),
        };
        let metrics = train_run(&cfg, data, Some(&out))?;
        runs.push((model, metrics));
    }

    let private: Vec<&(Model, RunMetrics)> = runs.iter().filter(|(m, _)| *m != Model::Baseline).collect();
    let mut files = Vec::new();
    match id {
        1 => {
            let acc: Vec<_> = private
                .iter()
                .map(|(m, r)| (m.name(), r.epochs.iter().map(|e| e.val_accuracy).collect()))
                .collect();
            let lr: Vec<_> = private
                .iter()
                .map(|(m, r)| (m.name(), r.rows.iter().map(|row| row.lr).collect()))
                .collect();
            files.push(dir.join("fig1_accuracy.csv"));
            write_series(&files[0], "epoch", &acc)?;
            files.push(dir.join("fig2_lr.csv"));
            write_series(&files[1], "step", &lr)?;
        }
        2 => {
            let baseline = runs[0].1.final_accuracy().expect("baseline ran");
            let path = dir.join("fig3_accuracy_loss.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["model", "epsilon", "val_accuracy", "accuracy_loss"])?;
            for (model, r) in &runs {
                let acc = r.final_accuracy().expect("at least one epoch");
                let loss = accuracy_loss(acc, baseline)?;
                w.write_record([
                    model.name().to_string(),
                    opt(r.final_epsilon()),
                    acc.to_string(),
                    loss.to_string(),
                ])?;
                // Record the comparison in the run's own summary as well.
                let mut summary = r.summary.clone();
                summary.set("baseline", Model::Baseline.name());
                summary.set("accuracy_loss", loss);
                summary.save(&dir.join(model.name()).join(SUMMARY_FILE))?;
            }
            w.flush().map_err(|e| HarnessError::io(&path, e))?;
            files.push(path);
        }
        3 => {
            let eps: Vec<_> = private
                .iter()
                .map(|(m, r)| (m.name(), r.epochs.iter().filter_map(|e| e.epsilon).collect()))
                .collect();
            files.push(dir.join("fig4_epsilon.csv"));
            write_series(&files[0], "epoch", &eps)?;
        }
        _ => unreachable!("id validated by models()"),
    }
    Ok(ExperimentOutput { dir, runs, files })
}
