//! The training loop.
//!
//! Private mode: Poisson lot → per-sample gradients → clip → noise → momentum
//! step, with the accountant advanced once per lot (also for empty lots).
//! Non-private mode: shuffled mini-batches and plain mean gradients.

use std::fs;
use std::path::{Path, PathBuf};

use dpsgd_core::accountant::RdpLedger;
use dpsgd_core::data::{self, Dataset};
use dpsgd_core::dp::{clip_rows, noisy_aggregate, poisson_sample, NoiseRng, PrivacyParams};
use dpsgd_core::nn::{Mode, Network, Sgd};
use dpsgd_core::rng::{self, DropoutStream, Stream};
use dpsgd_core::schedule::{one_cycle_lr, one_cycle_momentum, OneCycleSpec, PlateauScheduler};
use rand::seq::SliceRandom;

use crate::config::{DataConfig, RunConfig, ScheduleConfig, TrainMode, REFERENCE_LABEL};
use crate::error::{HarnessError, Result};
use crate::metrics::{
    EpochRecord, MetricsWriter, RunMetrics, StepRow, Summary, CONFIG_FILE, METRICS_FILE, SUMMARY_FILE,
};

#[derive(Debug, Clone)]
pub struct TrainingData {
    pub train: Dataset,
    pub val: Dataset,
}

/// Loads train/validation sets and applies the configured training subset.
pub fn load_data(cfg: &DataConfig) -> Result<TrainingData> {
    for name in [
        data::TRAIN_IMAGES,
        data::TRAIN_LABELS,
        data::TEST_IMAGES,
        data::TEST_LABELS,
    ] {
        let path = cfg.dir.join(name);
        if !path.is_file() {
            return Err(HarnessError::Data(format!("missing dataset file {}", path.display())));
        }
    }
    let (train, val) =
        Dataset::load_mnist(&cfg.dir, cfg.normalization).map_err(|e| HarnessError::Data(e.to_string()))?;
    let train = match cfg.subset {
        Some(n) => data::subset(&train, n, cfg.subset_seed)?,
        None => train,
    };
    Ok(TrainingData { train, val })
}

/// Where a run writes `metrics.csv`, `summary.txt` and `config.txt`.
#[derive(Debug, Clone)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Appended to the echoed config.
    pub overrides: Vec<(String, String)>,
}

/// Steps per epoch: `round(1/q)` lots in private mode, `⌈N/B⌉` batches otherwise.
pub fn steps_per_epoch(mode: &TrainMode, n_train: usize) -> u64 {
    match mode {
        TrainMode::Private(p) => ((1.0 / p.sample_rate).round() as u64).max(1),
        TrainMode::NonPrivate { batch_size } => n_train.div_ceil(*batch_size).max(1) as u64,
    }
}

enum Scheduler {
    OneCycle(OneCycleSpec),
    Plateau(PlateauScheduler),
}

impl Scheduler {
    fn new(cfg: &ScheduleConfig, total_steps: u64) -> Result<Self> {
        Ok(match cfg {
            ScheduleConfig::OneCycle(s) => {
                let spec = OneCycleSpec { total_steps, ..*s };
                spec.validate()?;
                Scheduler::OneCycle(spec)
            }
            ScheduleConfig::Plateau(p) => Scheduler::Plateau(PlateauScheduler::new(*p)?),
        })
    }

    fn at(&self, step: u64) -> Result<(f64, f64)> {
        Ok(match self {
            Scheduler::OneCycle(s) => (one_cycle_lr(s, step)?, one_cycle_momentum(s, step)?),
            Scheduler::Plateau(p) => (p.lr(), p.spec().momentum),
        })
    }

    fn end_epoch(&mut self, val_loss: f64) {
        if let Scheduler::Plateau(p) = self {
            p.observe(val_loss);
        }
    }
}

struct Run<'a> {
    cfg: &'a RunConfig,
    data: &'a TrainingData,
    net: Network,
    sgd: Sgd,
    ledger: Option<RdpLedger>,
    writer: Option<MetricsWriter>,
    out: Option<&'a OutputSpec>,
    metrics: RunMetrics,
}

impl Run<'_> {
    fn record(&mut self, row: StepRow) -> Result<()> {
        if let Some(w) = &mut self.writer {
            w.write(&row)?;
        }
        self.metrics.rows.push(row);
        Ok(())
    }

    fn base_summary(&self, steps: u64) -> Summary {
        let cfg = self.cfg;
        let mut s = Summary::default();
        s.set("name", &cfg.name);
        s.set("mode", cfg.mode.name());
        s.set("schedule", cfg.schedule.name());
        s.set("seed", cfg.seed);
        s.set("epochs", cfg.epochs);
        s.set("steps", steps);
        s.set("train_size", self.data.train.len());
        s.set("val_size", self.data.val.len());
        s.set("param_count", self.net.param_count());
        s.set("architecture_digest", self.net.architecture_digest());
        if let TrainMode::Private(p) = cfg.mode {
            s.set("noise_multiplier", p.noise_multiplier);
            s.set("clip_norm", p.clip_norm);
            s.set("sample_rate", p.sample_rate);
            s.set("delta", p.target_delta);
        }
        s.set("defaults", REFERENCE_LABEL);
        s
    }

    /// Writes a diagnostic summary and returns the abort error.
    fn abort(&mut self, epoch: u32, step: u64, reason: String) -> HarnessError {
        let mut s = self.base_summary(step);
        s.set("status", "aborted");
        s.set("abort_epoch", epoch);
        s.set("abort_step", step);
        s.set("abort_reason", &reason);
        if let Some(w) = &mut self.writer {
            let _ = w.flush();
        }
        if let Some(out) = self.out {
            let _ = s.save(&out.dir.join(SUMMARY_FILE));
        }
        self.metrics.summary = s;
        HarnessError::Numerical(format!("epoch {epoch}, step {step}: {reason}"))
    }

    fn evaluate(&self) -> Result<(f64, f64)> {
        let e = self.net.evaluate(self.data.val.images(), self.data.val.labels())?;
        Ok((e.accuracy, e.loss))
    }

    fn privacy(&self, delta: f64) -> Result<(Option<f64>, Option<f64>)> {
        Ok(match &self.ledger {
            Some(l) => {
                let r = l.to_dp(delta)?;
                (Some(r.epsilon), Some(r.best_order))
            }
            None => (None, None),
        })
    }
}

/// Mean loss over a lot must be finite, as must the update and the weights.
fn non_finite(loss: f64, update: &[f64], net: &Network) -> Option<String> {
    if !loss.is_finite() {
        return Some(format!("training loss is {loss}"));
    }
    if update.iter().any(|v| !v.is_finite()) {
        return Some("non-finite gradient update".into());
    }
    if net.params().iter().any(|v| !v.is_finite()) {
        return Some("non-finite parameter".into());
    }
    None
}

/// Runs one configuration to completion.
///
/// With `out`, metrics are appended to `metrics.csv` as they are produced
/// and the summary and echoed config are written next to them.
pub fn train_run(cfg: &RunConfig, data: &TrainingData, out: Option<&OutputSpec>) -> Result<RunMetrics> {
    cfg.validate()?;
    let net = Network::mnist(&cfg.arch, cfg.seed)?;
    if net.input_shape() != data.train.sample_shape() {
        return Err(HarnessError::Data(format!(
            "images are {:?}, network expects {:?}",
            data.train.sample_shape(),
            net.input_shape()
        )));
    }
    let spe = steps_per_epoch(&cfg.mode, data.train.len());
    let total = spe * cfg.epochs as u64;
    let mut sched = Scheduler::new(&cfg.schedule, total)?;

    let writer = match out {
        Some(o) => {
            fs::create_dir_all(&o.dir).map_err(|e| HarnessError::io(&o.dir, e))?;
            let cfg_path = o.dir.join(CONFIG_FILE);
            fs::write(&cfg_path, cfg.echo(&o.overrides)).map_err(|e| HarnessError::io(&cfg_path, e))?;
            Some(MetricsWriter::create(&o.dir.join(METRICS_FILE), cfg.is_private())?)
        }
        None => None,
    };
    let mut run = Run {
        cfg,
        data,
        sgd: Sgd::new(net.param_count()),
        net,
        ledger: cfg.is_private().then(RdpLedger::default),
        writer,
        out,
        metrics: RunMetrics {
            rows: Vec::new(),
            epochs: Vec::new(),
            summary: Summary::default(),
        },
    };

    let dropout = DropoutStream::new(cfg.seed);
    let mut sampling = rng::stream(cfg.seed, Stream::Sampling);
    let mut shuffle = rng::stream(cfg.seed, Stream::Shuffle);
    let mut noise = NoiseRng::new(cfg.seed);
    let n = data.train.len();
    let delta = match cfg.mode {
        TrainMode::Private(p) => p.target_delta,
        TrainMode::NonPrivate { .. } => 0.0,
    };

    let mut step: u64 = 0;
    for epoch in 1..=cfg.epochs {
        let order: Vec<usize> = match cfg.mode {
            TrainMode::NonPrivate { .. } => {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut shuffle);
                idx
            }
            TrainMode::Private(_) => Vec::new(),
        };
        for s in 0..spe {
            let (lr, momentum) = sched.at(step)?;
            let mode = Mode::Train { dropout, step };
            let (indices, lot_privacy): (Vec<usize>, Option<PrivacyParams>) = match cfg.mode {
                TrainMode::Private(p) => (poisson_sample(n, p.sample_rate, &mut sampling), Some(p)),
                TrainMode::NonPrivate { batch_size } => {
                    let lo = s as usize * batch_size;
                    (order[lo..(lo + batch_size).min(n)].to_vec(), None)
                }
            };
            let mut train_loss = None;
            if !indices.is_empty() {
                let (x, y) = data.train.gather(&indices);
                let (update, loss) = match lot_privacy {
                    Some(p) => {
                        let (mut grads, loss) = run.net.per_sample_gradients(&x, &y, mode)?;
                        clip_rows(&mut grads, p.clip_norm)?;
                        let update = noisy_aggregate(&grads, p.noise_multiplier, p.clip_norm, &mut noise)
                            .expect("lot is non-empty");
                        (update, loss)
                    }
                    None => run.net.batch_gradient(&x, &y, mode)?,
                };
                run.sgd.apply_update(&mut run.net, &update, lr, momentum)?;
                if let Some(reason) = non_finite(loss, &update, &run.net) {
                    return Err(run.abort(epoch, step + 1, reason));
                }
                train_loss = Some(loss);
            }
            if let (Some(ledger), Some(p)) = (&mut run.ledger, lot_privacy) {
                ledger.account_step(p.sample_rate, p.noise_multiplier)?;
            }
            step += 1;

            let boundary = s + 1 == spe;
            let extra = cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every);
            let mut row = StepRow {
                epoch,
                step,
                lr,
                momentum,
                train_loss,
                val_accuracy: None,
                epsilon: None,
                best_order: None,
            };
            if boundary || extra {
                let (acc, val_loss) = run.evaluate()?;
                if !val_loss.is_finite() {
                    return Err(run.abort(epoch, step, format!("validation loss is {val_loss}")));
                }
                let (eps, order) = run.privacy(delta)?;
                row.val_accuracy = Some(acc);
                row.epsilon = eps;
                row.best_order = order;
                if boundary {
                    run.metrics.epochs.push(EpochRecord {
                        epoch,
                        step,
                        lr,
                        val_accuracy: acc,
                        val_loss,
                        epsilon: eps,
                        best_order: order,
                    });
                    sched.end_epoch(val_loss);
                }
            }
            run.record(row)?;
        }
        if let Some(w) = &mut run.writer {
            w.flush()?;
        }
    }

    let mut s = run.base_summary(step);
    s.set("status", "completed");
    let last = *run.metrics.epochs.last().expect("at least one epoch");
    s.set("final_val_accuracy", last.val_accuracy);
    s.set("final_val_loss", last.val_loss);
    let best = run.metrics.epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
    s.set("best_val_accuracy", best);
    if let (Some(eps), Some(order)) = (last.epsilon, last.best_order) {
        s.set("epsilon", eps);
        s.set("best_order", order);
    }
    if let Some(o) = out {
        s.save(&o.dir.join(SUMMARY_FILE))?;
    }
    run.metrics.summary = s;
    Ok(run.metrics)
}

/// Output directory for a run when neither the CLI nor the config names one.
pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| Path::new("runs").join(&cfg.name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use dpsgd_core::data::N_CLASSES;
    use dpsgd_core::Tensor;

    fn tiny_data(n: usize) -> TrainingData {
        let mut data = Vec::with_capacity(n * 784);
        for i in 0..n {
            // Class encoded as a bright row, so the task is learnable.
            let class = i % N_CLASSES;
            for p in 0..784 {
                data.push(if p / 28 == 2 * class + 4 { 2.0 } else { -0.4 });
            }
        }
        let labels: Vec<usize> = (0..n).map(|i| i % N_CLASSES).collect();
        let ds = Dataset::new(Tensor::new(vec![n, 1, 28, 28], data).unwrap(), labels).unwrap();
        TrainingData {
            train: ds.clone(),
            val: ds,
        }
    }

    fn private_cfg(epochs: u32) -> RunConfig {
        RunConfig::parse(&format!(
            "run.epochs = {epochs}\ndp.sample_rate = 0.25\nschedule.max_lr = 0.5\nmodel.conv1_channels = 2\nmodel.conv2_channels = 2\nmodel.hidden = 8\n"
        ))
        .unwrap()
    }

    #[test]
    fn steps_per_epoch_by_mode() {
        let cfg = private_cfg(1);
        assert_eq!(steps_per_epoch(&cfg.mode, 1000), 4);
        assert_eq!(steps_per_epoch(&TrainMode::NonPrivate { batch_size: 64 }, 130), 3);
    }

    #[test]
    fn private_epsilon_nondecreasing_and_matches_ledger() {
        let data = tiny_data(40);
        let m = train_run(&private_cfg(3), &data, None).unwrap();
        let eps: Vec<f64> = m.epochs.iter().map(|e| e.epsilon.unwrap()).collect();
        assert!(eps.windows(2).all(|w| w[0] <= w[1]));
        let mut ledger = RdpLedger::default();
        ledger.account_steps(0.25, 1.1, 12).unwrap();
        assert_eq!(m.final_epsilon().unwrap(), ledger.to_dp(1e-5).unwrap().epsilon);
        assert_eq!(m.rows.len(), 12);
    }

    #[test]
    fn non_private_has_no_epsilon() {
        let data = tiny_data(30);
        let cfg =
            RunConfig::parse("run.mode = non_private\ntrain.batch_size = 8\nschedule.kind = plateau\nrun.epochs = 1\n")
                .unwrap();
        let m = train_run(&cfg, &data, None).unwrap();
        assert_eq!(m.rows.len(), 4);
        assert!(m.rows.iter().all(|r| r.epsilon.is_none()));
        assert!(m.summary.get("epsilon").is_none());
    }

    #[test]
    fn divergence_aborts_with_record() {
        let data = tiny_data(20);
        let cfg = RunConfig::parse(
            "run.mode = non_private\nschedule.kind = plateau\nschedule.initial_lr = 1e308\nrun.epochs = 6\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = OutputSpec {
            dir: dir.path().to_path_buf(),
            overrides: vec![],
        };
        let err = train_run(&cfg, &data, Some(&out)).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let s = Summary::load(&dir.path().join(SUMMARY_FILE)).unwrap();
        assert_eq!(s.get("status"), Some("aborted"));
    }

    #[test]
    fn missing_data_is_a_data_error() {
        let cfg = DataConfig {
            dir: PathBuf::from("/nonexistent/mnist"),
            subset: None,
            subset_seed: 0,
            normalization: Default::default(),
        };
        assert_eq!(load_data(&cfg).unwrap_err().exit_code(), 3);
    }
}
