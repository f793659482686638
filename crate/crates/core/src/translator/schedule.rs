/// Validation-driven learning-rate schedule: the rate is multiplied by
/// `decay_factor` after every `decay_patience` consecutive non-improving
/// checks, and training stops once `stop_patience` consecutive checks have
/// passed without improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    decay_factor: f64,
    decay_patience: usize,
    stop_patience: usize,
    best: f64,
    stale: usize,
    since_decay: usize,
    checks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckOutcome {
    Improved,
    Stale,
    Decayed,
    Stop,
}

impl PlateauSchedule {
    pub fn new(lr: f64, decay_factor: f64, decay_patience: usize, stop_patience: usize) -> Self {
        Self { lr, decay_factor, decay_patience, stop_patience, best: f64::INFINITY, stale: 0, since_decay: 0, checks: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn stale_checks(&self) -> usize {
        self.stale
    }

    pub fn checks(&self) -> usize {
        self.checks
    }

    /// Records one validation result. Only a strictly lower loss counts as
    /// an improvement.
    pub fn observe(&mut self, val_loss: f64) -> CheckOutcome {
        self.checks += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
            self.since_decay = 0;
            return CheckOutcome::Improved;
        }
        self.stale += 1;
        self.since_decay += 1;
        if self.stale >= self.stop_patience {
            return CheckOutcome::Stop;
        }
        if self.since_decay >= self.decay_patience {
            self.since_decay = 0;
            self.lr *= self.decay_factor;
            return CheckOutcome::Decayed;
        }
        CheckOutcome::Stale
    }
}
