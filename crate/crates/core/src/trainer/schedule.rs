use serde::{Deserialize, Serialize};

/// Reduce-on-plateau learning rate.
///
/// An epoch improves when `loss < best − min_delta`. After `patience`
/// consecutive non-improving epochs the rate is multiplied by `factor`
/// (clamped at `min_lr`) and the counter restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub min_delta: f64,
    best: f64,
    counter: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64, min_delta: f64) -> Self {
        Self { lr, factor, patience, min_lr, min_delta, best: f64::INFINITY, counter: 0 }
    }

    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.counter = 0;
        } else {
            self.counter += 1;
            if self.counter >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.counter = 0;
            }
        }
        self.lr
    }
}

/// Replays [`PlateauScheduler`] over a loss history and returns the final rate.
pub fn plateau_scheduler(history: &[f64], lr: f64, factor: f64, patience: usize, min_lr: f64, min_delta: f64) -> f64 {
    let mut s = PlateauScheduler::new(lr, factor, patience, min_lr, min_delta);
    history.iter().fold(lr, |_, &l| s.step(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopDecision {
    Continue,
    /// Stop; epochs are 1-indexed.
    Stop {
        best_epoch: usize,
    },
}

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    counter: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { patience, min_delta, best: f64::INFINITY, best_epoch: 0, epoch: 0, counter: 0 }
    }

    pub fn observe(&mut self, val_loss: f64) -> StopDecision {
        self.epoch += 1;
        if val_loss < self.best - self.min_delta {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.counter = 0;
        } else {
            self.counter += 1;
        }
        if self.counter >= self.patience {
            StopDecision::Stop { best_epoch: self.best_epoch }
        } else {
            StopDecision::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Replays [`EarlyStopper`] over a history; returns the decision and the
/// epoch at which it was made.
pub fn early_stop(history: &[f64], patience: usize, min_delta: f64) -> (StopDecision, usize) {
    let mut s = EarlyStopper::new(patience, min_delta);
    for (i, &l) in history.iter().enumerate() {
        if let d @ StopDecision::Stop { .. } = s.observe(l) {
            return (d, i + 1);
        }
    }
    (StopDecision::Continue, history.len())
}
