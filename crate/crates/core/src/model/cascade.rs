use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::classifier::ClassificationBlock;
use super::config::{ArchConfig, NormConfig, RemnantBlockConfig};
use super::remnant::RemnantBlock;
use super::Head;
use crate::error::{invalid, Error, Result};
use crate::graph::{softmax, Var};
use crate::nn::{commit_batch_stats, Mode, Session};
use crate::optim::Adam;
use crate::param::ParamStore;
use crate::real::Real;
use crate::tensor::Tensor;
use crate::derive_seed;

/// Remnant blocks applied in sequence, then `head`. One parameter store,
/// one loss: training updates both parts together.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel<T: Real, H> {
    pub store: ParamStore<T>,
    blocks: Vec<RemnantBlock>,
    head: H,
}

/// The canonical composition: remnant blocks + [`ClassificationBlock`].
pub type RemNet<T = f32> = CascadeModel<T, ClassificationBlock>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub stage: String,
    /// Shape without the batch axis.
    pub shape: Vec<usize>,
}

impl<T: Real> RemNet<T> {
    pub fn from_config(cfg: &ArchConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Self::build(&cfg.remnant, cfg.norm, seed, |store, rng| {
            ClassificationBlock::new(store, "classifier", &cfg.classifier, cfg.patch_size, 3, cfg.norm, rng)
        })
    }
}

impl<T: Real, H: Head<T>> CascadeModel<T, H> {
    /// Builds the head from one seeded stream and the blocks from another,
    /// so the head initializes identically with or without blocks.
    pub fn build<F>(blocks: &[RemnantBlockConfig], norm: NormConfig, seed: u64, make_head: F) -> Result<Self>
    where
        F: FnOnce(&mut ParamStore<T>, &mut ChaCha8Rng) -> Result<H>,
    {
        let mut store = ParamStore::new();
        let head = make_head(&mut store, &mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 1])))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 2]));
        let blocks = blocks
            .iter()
            .enumerate()
            .map(|(i, cfg)| RemnantBlock::new(&mut store, &alloc::format!("remnant.{i}"), *cfg, norm, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(store, blocks, head)
    }

    /// Composes already-built parts; rejects a head whose input channels do
    /// not match the block output.
    pub fn new(store: ParamStore<T>, blocks: Vec<RemnantBlock>, head: H) -> Result<Self> {
        let want = head.input_shape();
        for b in &blocks {
            if b.config.in_channels != want[2] {
                return Err(Error::ShapeMismatch {
                    op: "cascade (remnant output vs classifier input)",
                    lhs: alloc::vec![b.config.in_channels],
                    rhs: want.to_vec(),
                });
            }
        }
        Ok(Self { store, blocks, head })
    }

    pub fn blocks(&self) -> &[RemnantBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &H {
        &self.head
    }

    pub fn n_class(&self) -> usize {
        self.head.n_class()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.head.input_shape()
    }

    /// The same model with the preprocessing stage dropped.
    pub fn without_blocks(&self) -> Self
    where
        H: Clone,
    {
        Self {
            store: self.store.clone(),
            blocks: Vec::new(),
            head: self.head.clone(),
        }
    }

    pub fn preprocess(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        self.blocks.iter().try_fold(x, |h, b| b.forward(s, h))
    }

    pub fn logits(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.preprocess(s, x)?;
        self.head.forward(s, h)
    }

    /// Shapes of every stage for an input batch.
    pub fn trace(&self, x: Tensor<T>, mode: Mode) -> Result<Vec<StageShape>> {
        let mut s = Session::new(&self.store, mode, false);
        let mut out = Vec::new();
        let mut h = s.input(x);
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(&mut s, h)?;
            out.push(StageShape {
                stage: alloc::format!("remnant.{i}"),
                shape: s.graph.shape(h)[1..].to_vec(),
            });
        }
        self.head.forward_traced(&mut s, h, &mut |stage, shape| {
            out.push(StageShape {
                stage: stage.to_string(),
                shape: shape[1..].to_vec(),
            })
        })?;
        Ok(out)
    }

    /// Class probabilities `[B, n_class]`.
    pub fn predict_proba_in(&self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut s = Session::new(&self.store, mode, false);
        let xv = s.input(x);
        let z = self.logits(&mut s, xv)?;
        softmax(s.graph.value(z))
    }

    /// Class probabilities with frozen batch-norm statistics.
    pub fn predict_proba(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        self.predict_proba_in(x, Mode::Infer)
    }

    /// Mean cross-entropy in inference mode (no state change).
    pub fn eval_loss(&self, x: Tensor<T>, labels: &[usize]) -> Result<f64> {
        let mut s = Session::new(&self.store, Mode::Infer, false);
        let xv = s.input(x);
        let z = self.logits(&mut s, xv)?;
        let (loss, _) = s.graph.softmax_cross_entropy(z, labels)?;
        Ok(s.graph.value(loss).data()[0].to_f64())
    }

    /// One optimizer step on a batch: forward in training mode, backward,
    /// running-statistics update, Adam. Nothing is modified when the loss
    /// comes out non-finite.
    pub fn train_step(&mut self, x: Tensor<T>, labels: &[usize], adam: &Adam) -> Result<f64> {
        let (loss, grads, stats) = {
            let mut s = Session::new(&self.store, Mode::Train, true);
            let xv = s.input(x);
            let z = self.logits(&mut s, xv)?;
            let (loss, _) = s.graph.softmax_cross_entropy(z, labels)?;
            let value = s.graph.value(loss).data()[0].to_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: 0,
                    step: 0,
                    lr: adam.lr,
                });
            }
            s.graph.backward(loss)?;
            (value, s.param_grads(), s.take_batch_stats())
        };
        adam.step(&mut self.store, &grads)?;
        commit_batch_stats(&mut self.store, stats);
        Ok(loss)
    }

    pub fn check_patch_batch(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1..] != self.input_shape() {
            return Err(invalid("model input", alloc::format!("expected [B, {:?}], got {shape:?}", self.input_shape())));
        }
        Ok(())
    }
}
