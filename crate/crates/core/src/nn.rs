//! Layers that own parameters in a [`ParamStore`] and emit graph ops
//! through a [`Session`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{BatchStats, Graph, Var};
use crate::param::{glorot_uniform_with, BufferId, ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are collected.
    Train,
    /// Frozen running statistics.
    Infer,
}

/// One forward (and optionally backward) pass: a fresh graph bound to a
/// read-only parameter store.
pub struct Session<'s, T: Real = f32> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    track_grads: bool,
    batch_stats: Vec<(BatchNorm, BatchStats<T>)>,
}

impl<'s, T: Real> Session<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: Mode, track_grads: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.params().len()],
            mode,
            track_grads,
            batch_stats: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    /// Graph leaf for a parameter; repeated uses share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.graph.leaf(self.store.param(id).tensor.clone(), self.track_grads);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.input(t)
    }

    /// Gradients of every parameter touched by the last backward pass.
    pub fn param_grads(&self) -> Vec<(ParamId, Vec<T>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let g = self.graph.grad((*v)?)?;
                Some((ParamId(i), g.to_vec()))
            })
            .collect()
    }

    pub fn take_batch_stats(&mut self) -> Vec<(BatchNorm, BatchStats<T>)> {
        core::mem::take(&mut self.batch_stats)
    }
}

/// Folds batch statistics from a training pass into the running estimates:
/// `running = momentum * running + (1 - momentum) * batch`.
pub fn commit_batch_stats<T: Real>(store: &mut ParamStore<T>, stats: Vec<(BatchNorm, BatchStats<T>)>) {
    for (bn, s) in stats {
        let m = T::from_f64(bn.momentum);
        let one_m = T::ONE - m;
        for (r, &b) in store.buffer_mut(bn.running_mean).tensor.data_mut().iter_mut().zip(&s.mean) {
            *r = m * *r + one_m * b;
        }
        for (r, &b) in store.buffer_mut(bn.running_var).tensor.data_mut().iter_mut().zip(&s.var) {
            *r = m * *r + one_m * b;
        }
        store.buffer_mut(bn.batches_tracked).tensor.data_mut()[0] += T::ONE;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
}

impl Conv2d {
    /// Glorot-uniform weights, zero bias.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_param(format!("{name}.weight"), glorot_uniform_with(&[kernel, kernel, cin, cout], rng)?);
        let bias = store.add_param(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Ok(Self {
            weight,
            bias,
            kernel,
            stride,
            cin,
            cout,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let b = s.param(self.bias);
        s.graph.conv2d(x, w, b, self.stride)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub batches_tracked: BufferId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, eps: f64, momentum: f64) -> Self {
        Self {
            gamma: store.add_param(format!("{name}.gamma"), Tensor::full(&[channels], T::ONE)),
            beta: store.add_param(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::full(&[channels], T::ONE)),
            batches_tracked: store.add_buffer(format!("{name}.batches_tracked"), Tensor::zeros(&[1])),
            channels,
            eps,
            momentum,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let eps = T::from_f64(self.eps);
        match s.mode {
            Mode::Train => {
                let (y, stats) = s.graph.batch_norm_train(x, gamma, beta, eps)?;
                s.batch_stats.push((*self, stats));
                Ok(y)
            }
            Mode::Infer => {
                let store = s.store;
                if store.buffer(self.batches_tracked).tensor.data()[0] == T::ZERO {
                    return Err(Error::MissingRunningStats);
                }
                let mean = store.buffer(self.running_mean).tensor.data();
                let var = store.buffer(self.running_var).tensor.data();
                s.graph.batch_norm_infer(x, gamma, beta, mean, var, eps)
            }
        }
    }
}

/// Per-channel PReLU; alpha starts at 0.25.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prelu {
    pub alpha: ParamId,
}

impl Prelu {
    pub const INIT: f64 = 0.25;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            alpha: store.add_param(format!("{name}.alpha"), Tensor::full(&[channels], T::from_f64(Self::INIT))),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let a = s.param(self.alpha);
        s.graph.prelu(x, a)
    }
}
