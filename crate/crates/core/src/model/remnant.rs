use alloc::format;

use rand::Rng;

use super::config::{NormConfig, RemnantActivation, RemnantBlockConfig};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::nn::{BatchNorm, Conv2d, Prelu, Session};
use crate::param::ParamStore;
use crate::real::Real;

/// Three 3x3 convolutions, each followed by batch norm, whose output is
/// subtracted from the batch-normalized block input. The normalized input is
/// computed once and concatenated onto the input of the second and third
/// convolution. No activation unless the PReLU variant is configured.
#[derive(Debug, Clone, PartialEq)]
pub struct RemnantBlock {
    pub config: RemnantBlockConfig,
    input_bn: BatchNorm,
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
    act: Option<(Prelu, Prelu)>,
}

impl RemnantBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: RemnantBlockConfig,
        norm: NormConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (c, f, k) = (config.in_channels, config.widen_filters, config.kernel_size);
        let bn = |store: &mut ParamStore<T>, n: &str, ch| BatchNorm::new(store, &format!("{name}.{n}"), ch, norm.eps, norm.momentum);
        let input_bn = bn(store, "bn_in", c);
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), c, f, k, 1, rng)?;
        let bn1 = bn(store, "bn1", f);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), c + f, f, k, 1, rng)?;
        let bn2 = bn(store, "bn2", f);
        let conv3 = Conv2d::new(store, &format!("{name}.conv3"), c + f, c, k, 1, rng)?;
        let bn3 = bn(store, "bn3", c);
        let act = match config.activation {
            RemnantActivation::None => None,
            RemnantActivation::Prelu => Some((
                Prelu::new(store, &format!("{name}.prelu1"), f),
                Prelu::new(store, &format!("{name}.prelu2"), f),
            )),
        };
        Ok(Self {
            config,
            input_bn,
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            act,
        })
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let shape = s.graph.shape(x);
        if shape.len() != 4 || shape[3] != self.config.in_channels {
            return Err(Error::ShapeMismatch {
                op: "remnant block input",
                lhs: shape.to_vec(),
                rhs: alloc::vec![self.config.in_channels],
            });
        }
        let xb = self.input_bn.forward(s, x)?;

        let h = self.conv1.forward(s, xb)?;
        let mut h1 = self.bn1.forward(s, h)?;
        if let Some((a, _)) = &self.act {
            h1 = a.forward(s, h1)?;
        }

        let cat = s.graph.concat(xb, h1)?;
        let h = self.conv2.forward(s, cat)?;
        let mut h2 = self.bn2.forward(s, h)?;
        if let Some((_, a)) = &self.act {
            h2 = a.forward(s, h2)?;
        }

        let cat = s.graph.concat(xb, h2)?;
        let h = self.conv3.forward(s, cat)?;
        let h3 = self.bn3.forward(s, h)?;
        s.graph.sub(xb, h3)
    }

    /// Convolution parameters, in forward order.
    pub fn convs(&self) -> [&Conv2d; 3] {
        [&self.conv1, &self.conv2, &self.conv3]
    }
}
