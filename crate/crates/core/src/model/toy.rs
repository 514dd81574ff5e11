use alloc::format;

use rand::Rng;

use super::config::NormConfig;
use super::Head;
use crate::error::{invalid, Result};
use crate::graph::Var;
use crate::nn::{BatchNorm, Conv2d, Prelu, Session};
use crate::param::ParamStore;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyConfig {
    pub patch_size: usize,
    pub filters: (usize, usize),
    pub n_class: usize,
}

/// Small stand-in for an external classifier: two stride-2 3x3 conv/BN/PReLU
/// stages, global average pooling and a 1x1 convolution to logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    pub config: ToyConfig,
    conv1: Conv2d,
    bn1: BatchNorm,
    act1: Prelu,
    conv2: Conv2d,
    bn2: BatchNorm,
    act2: Prelu,
    out: Conv2d,
}

impl ToyClassifier {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, config: ToyConfig, norm: NormConfig, rng: &mut R) -> Result<Self> {
        if !config.patch_size.is_multiple_of(4) || config.n_class < 2 {
            return Err(invalid("toy classifier", "patch size must be a multiple of 4 and n_class >= 2"));
        }
        let (f1, f2) = config.filters;
        let bn = |store: &mut ParamStore<T>, n: &str, c| BatchNorm::new(store, &format!("{name}.{n}"), c, norm.eps, norm.momentum);
        Ok(Self {
            config,
            conv1: Conv2d::new(store, &format!("{name}.conv1"), 3, f1, 3, 2, rng)?,
            bn1: bn(store, "bn1", f1),
            act1: Prelu::new(store, &format!("{name}.prelu1"), f1),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), f1, f2, 3, 2, rng)?,
            bn2: bn(store, "bn2", f2),
            act2: Prelu::new(store, &format!("{name}.prelu2"), f2),
            out: Conv2d::new(store, &format!("{name}.out"), f2, config.n_class, 1, 1, rng)?,
        })
    }
}

impl<T: Real> Head<T> for ToyClassifier {
    fn input_shape(&self) -> [usize; 3] {
        [self.config.patch_size, self.config.patch_size, 3]
    }

    fn n_class(&self) -> usize {
        self.config.n_class
    }

    fn forward_traced(&self, s: &mut Session<'_, T>, x: Var, trace: &mut dyn FnMut(&str, &[usize])) -> Result<Var> {
        let shape = s.graph.shape(x);
        if shape.len() != 4 || shape[1..] != <Self as Head<T>>::input_shape(self) {
            return Err(crate::Error::ShapeMismatch {
                op: "toy classifier input",
                lhs: shape.to_vec(),
                rhs: <Self as Head<T>>::input_shape(self).to_vec(),
            });
        }
        let mut h = self.conv1.forward(s, x)?;
        h = self.bn1.forward(s, h)?;
        h = self.act1.forward(s, h)?;
        trace("conv_bn_prelu", s.graph.shape(h));
        h = self.conv2.forward(s, h)?;
        h = self.bn2.forward(s, h)?;
        h = self.act2.forward(s, h)?;
        trace("conv_bn_prelu", s.graph.shape(h));
        h = s.graph.avg_pool(h, self.config.patch_size / 4)?;
        trace("avg_pool", s.graph.shape(h));
        h = self.out.forward(s, h)?;
        trace("logits", s.graph.shape(h));
        Ok(h)
    }
}
