//! Reduce-on-plateau learning-rate schedule.

/// What the trainer should do after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    /// The rate was just multiplied by the decay factor.
    Reduced,
    /// The rate fell below the floor.
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    floor: f64,
    min_delta: f64,
    best: Option<f64>,
    wait: usize,
    reductions: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, floor: f64, min_delta: f64) -> Self {
        Self {
            lr,
            factor,
            patience: patience.max(1),
            floor,
            min_delta,
            best: None,
            wait: 0,
            reductions: 0,
        }
    }

    /// Treats `loss` as already seen, so the first epoch must beat it.
    pub fn with_baseline(mut self, loss: f64) -> Self {
        self.best = Some(loss);
        self
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Improvement means strictly below the best loss by more than
    /// `min_delta`; `patience` consecutive misses multiply the rate by
    /// `factor`.
    pub fn observe(&mut self, val_loss: f64) -> Decision {
        let improved = self.best.is_none_or(|b| val_loss < b - self.min_delta);
        if improved {
            self.best = Some(val_loss);
            self.wait = 0;
            return Decision::Continue;
        }
        self.wait += 1;
        if self.wait < self.patience {
            return Decision::Continue;
        }
        self.wait = 0;
        self.lr *= self.factor;
        self.reductions += 1;
        if self.lr < self.floor {
            Decision::Stop
        } else {
            Decision::Reduced
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_resets_patience() {
        let mut s = PlateauScheduler::new(1e-3, 0.5, 2, 1e-7, 0.0);
        assert_eq!(s.observe(1.0), Decision::Continue);
        assert_eq!(s.observe(1.0), Decision::Continue);
        assert_eq!(s.observe(0.9), Decision::Continue);
        assert_eq!(s.observe(0.95), Decision::Continue);
        assert_eq!(s.observe(0.95), Decision::Reduced);
        assert_eq!(s.lr(), 5e-4);
    }

    #[test]
    fn min_delta_requires_margin() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 1, 1e-7, 0.1).with_baseline(1.0);
        assert_eq!(s.observe(0.95), Decision::Reduced);
        assert_eq!(s.observe(0.8), Decision::Continue);
    }
}
