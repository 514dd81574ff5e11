//! End-to-end training: one random 64x64 crop per cluster per epoch, Adam,
//! reduce-on-plateau schedule, best-validation checkpointing.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{center_crop, patches_to_batch, random_patch_crop, ClusterRecord};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::model::{CascadeModel, Head};
use crate::optim::Adam;
use crate::param::ParamStore;
use crate::schedule::{Decision, PlateauScheduler};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub plateau_patience: usize,
    pub lr_floor: f64,
    pub max_epochs: usize,
    pub min_delta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr_init: 1e-3,
            lr_decay_factor: 0.5,
            plateau_patience: 2,
            lr_floor: 1e-7,
            max_epochs: 50,
            min_delta: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn scheduler(&self) -> PlateauScheduler {
        PlateauScheduler::new(self.lr_init, self.lr_decay_factor, self.plateau_patience, self.lr_floor, self.min_delta)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr_init, self.lr_decay_factor, self.lr_floor].iter().all(|v| *v > 0.0 && v.is_finite());
        if !positive || self.batch_size == 0 || self.plateau_patience == 0 || self.max_epochs == 0 || self.lr_decay_factor >= 1.0 {
            return Err(crate::error::invalid("train config", "all rates and sizes must be positive, decay factor below 1"));
        }
        Ok(())
    }
}

/// A cluster with its ground-truth camera model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub cluster: ClusterRecord,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: crate::Real = f32> {
    pub store: ParamStore<T>,
    pub epoch: usize,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    LrFloor,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

/// Deterministic center crops of every sample, batched.
pub fn validation_batches(samples: &[TrainSample], batch_size: usize) -> Result<Vec<(Tensor<f32>, Vec<usize>)>> {
    samples
        .chunks(batch_size.max(1))
        .map(|chunk| {
            let patches = chunk.iter().map(|s| center_crop(&s.cluster)).collect::<Result<Vec<_>>>()?;
            Ok((patches_to_batch(&patches)?, chunk.iter().map(|s| s.label).collect()))
        })
        .collect()
}

pub fn validation_loss<H: Head<f32>>(model: &CascadeModel<f32, H>, batches: &[(Tensor<f32>, Vec<usize>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for (x, labels) in batches {
        total += model.eval_loss(x.clone(), labels)? * labels.len() as f64;
        n += labels.len();
    }
    if n == 0 {
        return Err(Error::Empty("validation set"));
    }
    Ok(total / n as f64)
}

/// Runs one epoch of shuffled random-crop mini-batches and returns the mean
/// training loss.
pub fn train_epoch<H: Head<f32>>(model: &mut CascadeModel<f32, H>, samples: &[TrainSample], cfg: &TrainConfig, epoch: usize, lr: f64) -> Result<f64> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64, u64::MAX])));
    let adam = Adam {
        lr,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    };
    let mut total = 0.0;
    for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let mut patches = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, i as u64, epoch as u64]));
            patches.push(random_patch_crop(&samples[i].cluster, &mut rng)?.0);
            labels.push(samples[i].label);
        }
        let loss = model.train_step(patches_to_batch(&patches)?, &labels, &adam).map_err(|e| match e {
            Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch, step, lr },
            other => other,
        })?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

/// Trains until the learning rate drops below the floor or `max_epochs` is
/// reached. `model` ends in its last-epoch state; the outcome carries the
/// parameters of the epoch with the lowest validation loss.
pub fn train<H: Head<f32>>(
    model: &mut CascadeModel<f32, H>,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let val_batches = validation_batches(val_set, cfg.batch_size)?;
    let mut sched = cfg.scheduler();
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut stop = StopReason::MaxEpochs;
    for epoch in 1..=cfg.max_epochs {
        let lr = sched.lr();
        let train_loss = train_epoch(model, train_set, cfg, epoch, lr)?;
        let val_loss = validation_loss(model, &val_batches)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: usize::MAX, lr });
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
        };
        on_epoch(&rec);
        history.push(rec);
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(Checkpoint {
                store: model.store.clone(),
                epoch,
                val_loss,
            });
        }
        if sched.observe(val_loss) == Decision::Stop {
            stop = StopReason::LrFloor;
            break;
        }
    }
    Ok(TrainOutcome {
        best: best.expect("at least one epoch ran"),
        history,
        stop,
    })
}
