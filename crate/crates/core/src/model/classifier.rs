use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::config::{ClassifierConfig, NormConfig};
use super::Head;
use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::nn::{BatchNorm, Conv2d, Prelu, Session};
use crate::param::ParamStore;
use crate::real::Real;

/// Strided conv + BN + PReLU stages, average pooling, then a 1x1
/// convolution to class logits. No fully connected layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationBlock {
    pub config: ClassifierConfig,
    patch_size: usize,
    stages: Vec<(Conv2d, BatchNorm, Prelu)>,
    out: Conv2d,
}

impl ClassificationBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &ClassifierConfig,
        patch_size: usize,
        in_channels: usize,
        norm: NormConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut extent = patch_size;
        for l in &config.layers {
            extent = extent.div_ceil(l.stride);
        }
        if !extent.is_multiple_of(config.pool_window) {
            return Err(invalid(
                "classifier",
                format!("final extent {extent} not divisible by pool window {}", config.pool_window),
            ));
        }
        let mut stages = Vec::with_capacity(config.layers.len());
        let mut cin = in_channels;
        for (i, l) in config.layers.iter().enumerate() {
            let conv = Conv2d::new(store, &format!("{name}.conv{i}"), cin, l.filters, l.kernel, l.stride, rng)?;
            let bn = BatchNorm::new(store, &format!("{name}.bn{i}"), l.filters, norm.eps, norm.momentum);
            let act = Prelu::new(store, &format!("{name}.prelu{i}"), l.filters);
            stages.push((conv, bn, act));
            cin = l.filters;
        }
        let out = Conv2d::new(store, &format!("{name}.out"), cin, config.n_class, 1, 1, rng)?;
        Ok(Self {
            config: config.clone(),
            patch_size,
            stages,
            out,
        })
    }
}

impl<T: Real> Head<T> for ClassificationBlock {
    fn input_shape(&self) -> [usize; 3] {
        [self.patch_size, self.patch_size, self.stages[0].0.cin]
    }

    fn n_class(&self) -> usize {
        self.config.n_class
    }

    fn forward_traced(&self, s: &mut Session<'_, T>, x: Var, trace: &mut dyn FnMut(&str, &[usize])) -> Result<Var> {
        let shape = s.graph.shape(x);
        if shape.len() != 4 || shape[1..] != <Self as Head<T>>::input_shape(self) {
            return Err(crate::Error::ShapeMismatch {
                op: "classifier input",
                lhs: shape.to_vec(),
                rhs: <Self as Head<T>>::input_shape(self).to_vec(),
            });
        }
        let mut h = x;
        for (conv, bn, act) in &self.stages {
            h = conv.forward(s, h)?;
            h = bn.forward(s, h)?;
            h = act.forward(s, h)?;
            trace("conv_bn_prelu", s.graph.shape(h));
        }
        h = s.graph.avg_pool(h, self.config.pool_window)?;
        trace("avg_pool", s.graph.shape(h));
        h = self.out.forward(s, h)?;
        trace("logits", s.graph.shape(h));
        Ok(h)
    }
}
