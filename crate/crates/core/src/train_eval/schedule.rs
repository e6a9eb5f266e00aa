use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub plateau_patience: usize,
    pub stop_patience: usize,
    pub label_smoothing: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            plateau_factor: 0.5,
            min_lr: 2e-6,
            plateau_patience: 9,
            stop_patience: 15,
            label_smoothing: 0.1,
            max_epochs: 60,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train_schedule", msg));
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau factor {} outside (0, 1)", self.plateau_factor));
        }
        if !(self.min_lr > 0.0) {
            return bad("minimum learning rate must be positive".into());
        }
        if self.plateau_patience == 0 || self.stop_patience == 0 {
            return bad("patiences must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label smoothing {} outside [0, 1)", self.label_smoothing));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// What the controller decided after observing one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochDecision {
    pub improved: bool,
    /// Rate for the next epoch.
    pub next_lr: f64,
    pub stop: bool,
}

/// Reduce-on-plateau plus early stopping driven by validation loss. Any
/// strict decrease counts as an improvement.
#[derive(Clone, Debug)]
pub struct PlateauController {
    factor: f64,
    min_lr: f64,
    plateau_patience: usize,
    stop_patience: usize,
    lr: f64,
    best: f64,
    best_epoch: Option<usize>,
    plateau_wait: usize,
    stop_wait: usize,
}

impl PlateauController {
    pub fn new(s: &TrainSchedule, initial_lr: f64) -> Self {
        Self {
            factor: s.plateau_factor,
            min_lr: s.min_lr,
            plateau_patience: s.plateau_patience,
            stop_patience: s.stop_patience,
            lr: initial_lr,
            best: f64::INFINITY,
            best_epoch: None,
            plateau_wait: 0,
            stop_wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> EpochDecision {
        let improved = val_loss < self.best || self.best_epoch.is_none();
        if improved {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.plateau_wait = 0;
            self.stop_wait = 0;
        } else {
            self.plateau_wait += 1;
            self.stop_wait += 1;
            if self.plateau_wait >= self.plateau_patience {
                self.lr = (self.lr * self.factor).max(self.min_lr).min(self.lr);
                self.plateau_wait = 0;
            }
        }
        EpochDecision {
            improved,
            next_lr: self.lr,
            stop: self.stop_wait >= self.stop_patience,
        }
    }
}
