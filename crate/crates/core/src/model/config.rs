use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RemnantActivation {
    /// Linear block, the default.
    #[default]
    None,
    /// PReLU after the first two convolutions (ablation variant).
    Prelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemnantBlockConfig {
    /// Width `f_i` of the two widening convolutions.
    pub widen_filters: usize,
    pub kernel_size: usize,
    pub in_channels: usize,
    pub activation: RemnantActivation,
}

impl RemnantBlockConfig {
    pub const CONV_COUNT: usize = 3;

    pub fn new(widen_filters: usize) -> Self {
        Self {
            widen_filters,
            kernel_size: 3,
            in_channels: 3,
            activation: RemnantActivation::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub const fn new(filters: usize, kernel: usize, stride: usize) -> Self {
        Self { filters, kernel, stride }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub layers: Vec<ConvSpec>,
    pub pool_window: usize,
    pub n_class: usize,
}

impl ClassifierConfig {
    pub fn canonical(n_class: usize) -> Self {
        Self {
            layers: vec![
                ConvSpec::new(64, 7, 2),
                ConvSpec::new(128, 5, 2),
                ConvSpec::new(256, 3, 2),
                ConvSpec::new(512, 2, 2),
            ],
            pool_window: 4,
            n_class,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(invalid("classifier", "no convolution layers"));
        }
        if self.layers.windows(2).any(|w| w[1].kernel >= w[0].kernel) {
            return Err(invalid("classifier", "kernel sizes must strictly decrease"));
        }
        if self.n_class < 2 {
            return Err(invalid("classifier", "n_class must be at least 2"));
        }
        if self.layers.iter().any(|l| l.filters == 0 || l.kernel == 0 || l.stride == 0) || self.pool_window == 0 {
            return Err(invalid("classifier", "filters, kernels, strides and pool window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { eps: 1e-5, momentum: 0.9 }
    }
}

/// Complete architecture description of a RemNet.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub patch_size: usize,
    pub remnant: Vec<RemnantBlockConfig>,
    pub classifier: ClassifierConfig,
    pub norm: NormConfig,
}

impl ArchConfig {
    /// Three remnant blocks (64, 128, 256) and the four-layer classifier.
    pub fn canonical(n_class: usize) -> Self {
        Self {
            patch_size: 64,
            remnant: [64, 128, 256].into_iter().map(RemnantBlockConfig::new).collect(),
            classifier: ClassifierConfig::canonical(n_class),
            norm: NormConfig::default(),
        }
    }

    pub fn remnant_widths(&self) -> Vec<usize> {
        self.remnant.iter().map(|b| b.widen_filters).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.classifier.validate()?;
        if self.patch_size == 0 {
            return Err(invalid("arch", "patch size must be positive"));
        }
        for b in &self.remnant {
            if b.widen_filters == 0 || b.kernel_size == 0 || b.in_channels == 0 {
                return Err(invalid("remnant block", "widths and kernel size must be positive"));
            }
        }
        Ok(())
    }
}
