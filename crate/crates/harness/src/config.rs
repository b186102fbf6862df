//! Run configuration as flat `key = value` text.
//!
//! Keys are namespaced (`run.*`, `model.*`, `dp.*`, `schedule.*`, `data.*`,
//! `train.*`). Blank lines and `#` comments are ignored; a repeated key
//! overrides the earlier value, which is how command-line overrides are
//! appended to an echoed config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use dpsgd_core::data::Normalization;
use dpsgd_core::dp::PrivacyParams;
use dpsgd_core::nn::ArchConfig;
use dpsgd_core::schedule::{OneCycleSpec, PlateauSpec};

use crate::error::{HarnessError, Result};

/// Label attached to outputs produced with the built-in private defaults.
pub const REFERENCE_LABEL: &str = "reference, not paper";

pub const KEYS: &[&str] = &[
    "run.name",
    "run.mode",
    "run.seed",
    "run.epochs",
    "run.out",
    "run.eval_every",
    "model.conv1_channels",
    "model.conv2_channels",
    "model.kernel",
    "model.hidden",
    "model.dropout",
    "dp.noise_multiplier",
    "dp.clip_norm",
    "dp.sample_rate",
    "dp.delta",
    "train.batch_size",
    "schedule.kind",
    "schedule.max_lr",
    "schedule.div_factor",
    "schedule.final_div_factor",
    "schedule.pct_up",
    "schedule.cyclic_momentum",
    "schedule.momentum_max",
    "schedule.momentum_min",
    "schedule.momentum",
    "schedule.initial_lr",
    "schedule.decay_factor",
    "schedule.patience",
    "schedule.min_lr",
    "schedule.threshold",
    "data.dir",
    "data.subset",
    "data.subset_seed",
    "data.mean",
    "data.std",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainMode {
    Private(PrivacyParams),
    NonPrivate { batch_size: usize },
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Private(_) => "private",
            TrainMode::NonPrivate { .. } => "non_private",
        }
    }
}

/// Learning-rate policy. The one-cycle `total_steps` is filled in when the
/// run length is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleConfig {
    OneCycle(OneCycleSpec),
    Plateau(PlateauSpec),
}

impl ScheduleConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleConfig::OneCycle(_) => "one_cycle",
            ScheduleConfig::Plateau(_) => "plateau",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub dir: PathBuf,
    /// Stratified training subset size; `None` uses the full training set.
    pub subset: Option<usize>,
    pub subset_seed: u64,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub epochs: u32,
    pub out: Option<PathBuf>,
    /// Extra validation every this many steps; 0 means epoch boundaries only.
    pub eval_every: u64,
    pub arch: ArchConfig,
    pub mode: TrainMode,
    pub schedule: ScheduleConfig,
    pub data: DataConfig,
    source: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seed: 0,
            epochs: 2,
            out: None,
            eval_every: 0,
            arch: ArchConfig::default(),
            mode: TrainMode::Private(PrivacyParams {
                noise_multiplier: 1.1,
                clip_norm: 1.0,
                sample_rate: 0.01,
                target_delta: 1e-5,
            }),
            schedule: ScheduleConfig::OneCycle(OneCycleSpec::new(1.0, 0)),
            data: DataConfig {
                dir: PathBuf::from("data/mnist"),
                subset: None,
                subset_seed: 0,
                normalization: Normalization::default(),
            },
            source: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| HarnessError::Config(format!("line {line}: cannot parse `{value}` for {key}")))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(HarnessError::Config(format!(
            "line {line}: `{value}` is not a boolean for {key}"
        ))),
    }
}

/// `(line number, key, value)` triples in file order.
fn entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        // `#` starts a comment anywhere on the line.
        let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(HarnessError::Config(format!("line {}: expected `key = value`", i + 1)));
        };
        let key = k.trim();
        if !KEYS.contains(&key) {
            return Err(HarnessError::Config(format!("line {}: unknown key `{key}`", i + 1)));
        }
        out.push((i + 1, key.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut mode = "private".to_string();
        let mut kind = "one_cycle".to_string();
        let mut privacy = match cfg.mode {
            TrainMode::Private(p) => p,
            TrainMode::NonPrivate { .. } => unreachable!("default is private"),
        };
        let mut batch_size = 64usize;
        let mut one_cycle = OneCycleSpec::new(1.0, 0);
        let mut plateau = PlateauSpec::new(0.05);
        let mut min_lr_set = false;

        for (line, key, value) in entries(text)? {
            let v = value.as_str();
            let k = key.as_str();
            match k {
                "run.name" => cfg.name = v.to_string(),
                "run.mode" => mode = v.to_string(),
                "run.seed" => cfg.seed = parse_value(k, v, line)?,
                "run.epochs" => cfg.epochs = parse_value(k, v, line)?,
                "run.out" => cfg.out = Some(PathBuf::from(v)),
                "run.eval_every" => cfg.eval_every = parse_value(k, v, line)?,
                "model.conv1_channels" => cfg.arch.conv1_channels = parse_value(k, v, line)?,
                "model.conv2_channels" => cfg.arch.conv2_channels = parse_value(k, v, line)?,
                "model.kernel" => cfg.arch.kernel = parse_value(k, v, line)?,
                "model.hidden" => cfg.arch.hidden = parse_value(k, v, line)?,
                "model.dropout" => cfg.arch.dropout = parse_value(k, v, line)?,
                "dp.noise_multiplier" => privacy.noise_multiplier = parse_value(k, v, line)?,
                "dp.clip_norm" => privacy.clip_norm = parse_value(k, v, line)?,
                "dp.sample_rate" => privacy.sample_rate = parse_value(k, v, line)?,
                "dp.delta" => privacy.target_delta = parse_value(k, v, line)?,
                "train.batch_size" => batch_size = parse_value(k, v, line)?,
                "schedule.kind" => kind = v.to_string(),
                "schedule.max_lr" => one_cycle.max_lr = parse_value(k, v, line)?,
                "schedule.div_factor" => one_cycle.div_factor = parse_value(k, v, line)?,
                "schedule.final_div_factor" => one_cycle.final_div_factor = parse_value(k, v, line)?,
                "schedule.pct_up" => one_cycle.pct_up = parse_value(k, v, line)?,
                "schedule.cyclic_momentum" => one_cycle.cyclic_momentum = parse_bool(k, v, line)?,
                "schedule.momentum_max" => one_cycle.momentum_max = parse_value(k, v, line)?,
                "schedule.momentum_min" => one_cycle.momentum_min = parse_value(k, v, line)?,
                "schedule.momentum" => {
                    let m: f64 = parse_value(k, v, line)?;
                    one_cycle.momentum = m;
                    plateau.momentum = m;
                }
                "schedule.initial_lr" => plateau.initial_lr = parse_value(k, v, line)?,
                "schedule.decay_factor" => plateau.decay_factor = parse_value(k, v, line)?,
                "schedule.patience" => plateau.patience = parse_value(k, v, line)?,
                "schedule.min_lr" => {
                    plateau.min_lr = parse_value(k, v, line)?;
                    min_lr_set = true;
                }
                "schedule.threshold" => plateau.threshold = parse_value(k, v, line)?,
                "data.dir" => cfg.data.dir = PathBuf::from(v),
                "data.subset" => {
                    let n: usize = parse_value(k, v, line)?;
                    cfg.data.subset = (n > 0).then_some(n);
                }
                "data.subset_seed" => cfg.data.subset_seed = parse_value(k, v, line)?,
                "data.mean" => cfg.data.normalization.mean = parse_value(k, v, line)?,
                "data.std" => cfg.data.normalization.std = parse_value(k, v, line)?,
                _ => unreachable!("key list checked in entries()"),
            }
        }
        if !min_lr_set {
            plateau.min_lr = plateau.initial_lr * 1e-3;
        }
        cfg.mode = match mode.as_str() {
            "private" => TrainMode::Private(privacy),
            "non_private" => TrainMode::NonPrivate { batch_size },
            other => {
                return Err(HarnessError::Config(format!(
                    "run.mode `{other}` must be private or non_private"
                )))
            }
        };
        cfg.schedule = match kind.as_str() {
            "one_cycle" => ScheduleConfig::OneCycle(one_cycle),
            "plateau" => ScheduleConfig::Plateau(plateau),
            other => {
                return Err(HarnessError::Config(format!(
                    "schedule.kind `{other}` must be one_cycle or plateau"
                )))
            }
        };
        cfg.source = Some(text.to_string());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(HarnessError::Config(format!(
                "run.name `{}` must be a plain file name",
                self.name
            )));
        }
        if self.epochs == 0 {
            return Err(HarnessError::Config("run.epochs must be at least 1".into()));
        }
        match self.mode {
            TrainMode::Private(p) => p.validate()?,
            TrainMode::NonPrivate { batch_size: 0 } => {
                return Err(HarnessError::Config("train.batch_size must be at least 1".into()));
            }
            TrainMode::NonPrivate { .. } => {}
        }
        match self.schedule {
            ScheduleConfig::OneCycle(s) => OneCycleSpec { total_steps: 2, ..s }.validate()?,
            ScheduleConfig::Plateau(s) => s.validate()?,
        }
        if !(self.arch.dropout >= 0.0 && self.arch.dropout < 1.0) {
            return Err(HarnessError::Config(format!(
                "model.dropout {} outside [0, 1)",
                self.arch.dropout
            )));
        }
        let n = self.data.normalization;
        if !(n.std > 0.0 && n.std.is_finite() && n.mean.is_finite()) {
            return Err(HarnessError::Config("data.std must be > 0".into()));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("run.name", self.name.clone());
        kv("run.mode", self.mode.name().into());
        kv("run.seed", self.seed.to_string());
        kv("run.epochs", self.epochs.to_string());
        if let Some(out) = &self.out {
            kv("run.out", out.display().to_string());
        }
        kv("run.eval_every", self.eval_every.to_string());
        kv("model.conv1_channels", self.arch.conv1_channels.to_string());
        kv("model.conv2_channels", self.arch.conv2_channels.to_string());
        kv("model.kernel", self.arch.kernel.to_string());
        kv("model.hidden", self.arch.hidden.to_string());
        kv("model.dropout", self.arch.dropout.to_string());
        match self.mode {
            TrainMode::Private(p) => {
                kv("dp.noise_multiplier", p.noise_multiplier.to_string());
                kv("dp.clip_norm", p.clip_norm.to_string());
                kv("dp.sample_rate", p.sample_rate.to_string());
                kv("dp.delta", p.target_delta.to_string());
            }
            TrainMode::NonPrivate { batch_size } => kv("train.batch_size", batch_size.to_string()),
        }
        kv("schedule.kind", self.schedule.name().into());
        match self.schedule {
            ScheduleConfig::OneCycle(c) => {
                kv("schedule.max_lr", c.max_lr.to_string());
                kv("schedule.div_factor", c.div_factor.to_string());
                kv("schedule.final_div_factor", c.final_div_factor.to_string());
                kv("schedule.pct_up", c.pct_up.to_string());
                kv("schedule.cyclic_momentum", c.cyclic_momentum.to_string());
                kv("schedule.momentum_max", c.momentum_max.to_string());
                kv("schedule.momentum_min", c.momentum_min.to_string());
                kv("schedule.momentum", c.momentum.to_string());
            }
            ScheduleConfig::Plateau(p) => {
                kv("schedule.initial_lr", p.initial_lr.to_string());
                kv("schedule.decay_factor", p.decay_factor.to_string());
                kv("schedule.patience", p.patience.to_string());
                kv("schedule.min_lr", p.min_lr.to_string());
                kv("schedule.threshold", p.threshold.to_string());
                kv("schedule.momentum", p.momentum.to_string());
            }
        }
        kv("data.dir", self.data.dir.display().to_string());
        kv("data.subset", self.data.subset.unwrap_or(0).to_string());
        kv("data.subset_seed", self.data.subset_seed.to_string());
        kv("data.mean", self.data.normalization.mean.to_string());
        kv("data.std", self.data.normalization.std.to_string());
        s
    }

    /// Text echoed next to the outputs: the source verbatim when the config
    /// was parsed, otherwise the canonical rendering, followed by `overrides`.
    pub fn echo(&self, overrides: &[(String, String)]) -> String {
        let mut text = self.source.clone().unwrap_or_else(|| self.render());
        if !overrides.is_empty() {
            if !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str("# command-line overrides\n");
            for (k, v) in overrides {
                let _ = writeln!(text, "{k} = {v}");
            }
        }
        text
    }

    pub fn is_private(&self) -> bool {
        matches!(self.mode, TrainMode::Private(_))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_reference_private() {
        let cfg = RunConfig::parse("").unwrap();
        let TrainMode::Private(p) = cfg.mode else { panic!() };
        assert_eq!(
            (p.noise_multiplier, p.clip_norm, p.sample_rate, p.target_delta),
            (1.1, 1.0, 0.01, 1e-5)
        );
    }

    #[test]
    fn render_round_trips() {
        let text = "run.name = a\nrun.mode = non_private\ntrain.batch_size = 32\nschedule.kind = plateau\nschedule.initial_lr = 0.1\n";
        let cfg = RunConfig::parse(text).unwrap();
        let back = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(back.render(), cfg.render());
        assert_eq!(back.mode, TrainMode::NonPrivate { batch_size: 32 });
        let ScheduleConfig::Plateau(p) = back.schedule else {
            panic!()
        };
        assert!((p.min_lr - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn comments_anywhere() {
        let cfg = RunConfig::parse("# header\nrun.mode = non_private   # baseline\nrun.seed = 3#x\n").unwrap();
        assert!(!cfg.is_private());
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn later_keys_override() {
        let cfg = RunConfig::parse("run.seed = 1\nrun.seed = 7\n").unwrap();
        assert_eq!(cfg.seed, 7);
        let echoed = cfg.echo(&[("run.seed".into(), "9".into())]);
        assert!(echoed.starts_with("run.seed = 1\nrun.seed = 7\n"));
        assert_eq!(RunConfig::parse(&echoed).unwrap().seed, 9);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "nonsense",
            "model.width = 3",
            "run.seed = -1",
            "run.mode = both",
            "schedule.kind = step",
            "run.epochs = 0",
            "dp.noise_multiplier = 0",
            "schedule.cyclic_momentum = maybe",
            "model.dropout = 1.0",
        ] {
            assert!(
                matches!(
                    RunConfig::parse(text),
                    Err(HarnessError::Config(_)) | Err(HarnessError::Core(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn non_private_ignores_dp_keys() {
        let cfg = RunConfig::parse("run.mode = non_private\ndp.noise_multiplier = 5\n").unwrap();
        assert!(!cfg.is_private());
        assert!(!cfg.render().contains("dp."));
    }
}
