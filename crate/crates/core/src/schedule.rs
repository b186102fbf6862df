//! Learning-rate and momentum policies.
//!
//! * One-cycle: cosine ramp from `max_lr / div_factor` up to `max_lr`, then
//!   cosine decay to `max_lr / (div_factor · final_div_factor)`; momentum
//!   moves the opposite way between `momentum_max` and `momentum_min`.
//! * Plateau: constant rate, multiplied by `decay_factor` whenever the
//!   validation loss fails to improve for `patience` consecutive epochs.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycleSpec {
    pub max_lr: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
    /// Fraction of `total_steps` spent rising.
    pub pct_up: f64,
    pub total_steps: u64,
    pub cyclic_momentum: bool,
    pub momentum_max: f64,
    pub momentum_min: f64,
    /// Used when `cyclic_momentum` is off.
    pub momentum: f64,
}

impl OneCycleSpec {
    pub fn new(max_lr: f64, total_steps: u64) -> Self {
        Self {
            max_lr,
            div_factor: 25.0,
            final_div_factor: 1e4,
            pct_up: 0.3,
            total_steps,
            cyclic_momentum: true,
            momentum_max: 0.95,
            momentum_min: 0.85,
            momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0 && self.max_lr.is_finite()) {
            return Err(Error::Config(format!("max_lr {} must be > 0", self.max_lr)));
        }
        if !(self.pct_up > 0.0 && self.pct_up < 1.0) {
            return Err(Error::Config(format!("pct_up {} outside (0, 1)", self.pct_up)));
        }
        if !(self.div_factor > 1.0) || !(self.final_div_factor > 1.0) {
            return Err(Error::Config("div factors must exceed 1".into()));
        }
        if self.total_steps < 2 {
            return Err(Error::Config("one-cycle needs at least 2 steps".into()));
        }
        Ok(())
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.max_lr / (self.div_factor * self.final_div_factor)
    }

    /// Step at which the rate peaks; always strictly inside `(0, total_steps)`.
    pub fn peak_step(&self) -> u64 {
        ((self.pct_up * self.total_steps as f64).round() as u64).clamp(1, self.total_steps - 1)
    }

    /// Phase position: `(rising, fraction of the phase completed)`.
    fn phase(&self, step: u64) -> Result<(bool, f64)> {
        self.validate()?;
        if step > self.total_steps {
            return Err(Error::Input(format!("step {step} beyond total {}", self.total_steps)));
        }
        let up = self.peak_step();
        Ok(if step <= up {
            (true, step as f64 / up as f64)
        } else {
            (false, (step - up) as f64 / (self.total_steps - up) as f64)
        })
    }
}

/// Cosine interpolation from `start` (t = 0) to `end` (t = 1).
fn cosine(start: f64, end: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return start;
    }
    if t >= 1.0 {
        return end;
    }
    end + (start - end) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

pub fn one_cycle_lr(spec: &OneCycleSpec, step: u64) -> Result<f64> {
    let (rising, t) = spec.phase(step)?;
    Ok(if rising {
        cosine(spec.initial_lr(), spec.max_lr, t)
    } else {
        cosine(spec.max_lr, spec.final_lr(), t)
    })
}

pub fn one_cycle_momentum(spec: &OneCycleSpec, step: u64) -> Result<f64> {
    let (rising, t) = spec.phase(step)?;
    if !spec.cyclic_momentum {
        return Ok(spec.momentum);
    }
    Ok(if rising {
        cosine(spec.momentum_max, spec.momentum_min, t)
    } else {
        cosine(spec.momentum_min, spec.momentum_max, t)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauSpec {
    pub initial_lr: f64,
    pub decay_factor: f64,
    /// Consecutive non-improving epochs that trigger a decay.
    pub patience: u32,
    pub min_lr: f64,
    /// Relative improvement below which an epoch counts as non-improving.
    pub threshold: f64,
    pub momentum: f64,
}

impl PlateauSpec {
    pub fn new(initial_lr: f64) -> Self {
        Self {
            initial_lr,
            decay_factor: 0.1,
            patience: 2,
            min_lr: initial_lr * 1e-3,
            threshold: 1e-4,
            momentum: 0.9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial lr {} must be > 0", self.initial_lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "decay factor {} outside (0, 1)",
                self.decay_factor
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if !(self.min_lr >= 0.0) || !(self.threshold >= 0.0) {
            return Err(Error::Config("min_lr and threshold must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mutable plateau state owned by the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    spec: PlateauSpec,
    lr: f64,
    best: f64,
    bad_epochs: u32,
    decays: u32,
}

impl PlateauScheduler {
    pub fn new(spec: PlateauSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            lr: spec.initial_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            decays: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn spec(&self) -> &PlateauSpec {
        &self.spec
    }

    pub fn decays(&self) -> u32 {
        self.decays
    }

    /// Feeds one epoch's validation loss and returns the rate for the next epoch.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best * (1.0 - self.spec.threshold) {
            self.best = val_loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.spec.patience {
                let next = (self.lr * self.spec.decay_factor).max(self.spec.min_lr);
                // Rounding can leave the rate a hair above the floor; that is not a decay.
                if self.lr - next > 1e-8 * self.lr {
                    self.lr = next;
                    self.decays += 1;
                }
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Rate after replaying `history` (one validation loss per epoch).
pub fn plateau_lr(spec: &PlateauSpec, history: &[f64]) -> Result<f64> {
    let mut s = PlateauScheduler::new(*spec)?;
    for &loss in history {
        s.observe(loss);
    }
    Ok(s.lr())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleSpec {
    OneCycle(OneCycleSpec),
    Plateau(PlateauSpec),
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScheduleSpec::OneCycle(s) => s.validate(),
            ScheduleSpec::Plateau(s) => s.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleSpec::OneCycle(_) => "one_cycle",
            ScheduleSpec::Plateau(_) => "plateau",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(max_lr: f64, total: u64) -> OneCycleSpec {
        OneCycleSpec::new(max_lr, total)
    }

    #[test]
    fn endpoints_and_peak() {
        let s = spec(15.62, 1000);
        assert_eq!(one_cycle_lr(&s, 0).unwrap(), 15.62 / 25.0);
        assert!(one_cycle_lr(&s, 1).unwrap() > 15.62 / 25.0);
        assert_eq!(s.peak_step(), 300);
        assert_eq!(one_cycle_lr(&s, 300).unwrap(), 15.62);
        assert_eq!(one_cycle_lr(&s, 1000).unwrap(), 15.62 / 25e4);
    }

    #[test]
    fn out_of_range_step() {
        assert!(matches!(one_cycle_lr(&spec(1.0, 10), 11), Err(Error::Input(_))));
        assert!(matches!(one_cycle_momentum(&spec(1.0, 10), 11), Err(Error::Input(_))));
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec(1.0, 100);
        s.pct_up = 1.0;
        assert!(one_cycle_lr(&s, 0).is_err());
        let mut s = spec(0.0, 100);
        assert!(s.validate().is_err());
        s.max_lr = 1.0;
        s.div_factor = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn momentum_mirrors_lr() {
        let s = spec(2.0, 200);
        assert_eq!(one_cycle_momentum(&s, 0).unwrap(), 0.95);
        assert!((one_cycle_momentum(&s, s.peak_step()).unwrap() - 0.85).abs() < 1e-15);
        assert!((one_cycle_momentum(&s, 200).unwrap() - 0.95).abs() < 1e-15);
        let flat = OneCycleSpec {
            cyclic_momentum: false,
            ..s
        };
        for step in [0, 60, 200] {
            assert_eq!(one_cycle_momentum(&flat, step).unwrap(), 0.9);
        }
    }

    #[test]
    fn continuity_and_unique_peak() {
        for (total, pct) in [(100u64, 0.3), (7, 0.5), (1001, 0.25), (2, 0.3)] {
            let s = OneCycleSpec {
                pct_up: pct,
                ..spec(3.0, total)
            };
            let up = s.peak_step();
            let bound = 2.0 * s.max_lr / up.min(total - up) as f64;
            let lrs: Vec<f64> = (0..=total).map(|t| one_cycle_lr(&s, t).unwrap()).collect();
            assert!(lrs.windows(2).all(|w| (w[1] - w[0]).abs() <= bound));
            let peaks = lrs.iter().filter(|&&l| l == s.max_lr).count();
            assert_eq!(peaks, 1);
            assert_eq!(lrs[up as usize], s.max_lr);
            assert!(lrs.iter().all(|&l| l <= s.max_lr));
        }
    }

    #[test]
    fn plateau_improving_keeps_rate() {
        let s = PlateauSpec::new(0.05);
        assert_eq!(plateau_lr(&s, &[1.0, 0.9, 0.8, 0.7, 0.5]).unwrap(), 0.05);
    }

    #[test]
    fn plateau_single_decay() {
        let s = PlateauSpec::new(0.05);
        // First epoch sets the baseline, then `patience` flat epochs.
        let lr = plateau_lr(&s, &[1.0, 1.0, 1.0]).unwrap();
        assert!((lr - 0.005).abs() < 1e-15);
        assert_eq!(plateau_lr(&s, &[1.0, 1.0]).unwrap(), 0.05);
    }

    #[test]
    fn plateau_three_orders_then_floor() {
        let s = PlateauSpec::new(0.05);
        let mut sched = PlateauScheduler::new(s).unwrap();
        let mut prev = sched.lr();
        for _ in 0..25 {
            let lr = sched.observe(0.42);
            assert!(lr <= prev);
            prev = lr;
        }
        assert!((sched.lr() - 5e-5).abs() < 1e-18);
        assert_eq!(sched.decays(), 3);
    }

    #[test]
    fn small_improvements_count_as_flat() {
        let s = PlateauSpec::new(0.05);
        let lr = plateau_lr(&s, &[1.0, 1.0 - 1e-6, 1.0 - 2e-6]).unwrap();
        assert!((lr - 0.005).abs() < 1e-15);
    }
}
