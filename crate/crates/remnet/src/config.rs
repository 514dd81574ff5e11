//! TOML run configuration and architecture descriptor. Every key has a
//! default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use remnet_core::data::{AugmentationSpec, QualityConstants, SplitConfig};
use remnet_core::eval::VotingConfig;
use remnet_core::model::{
    ArchConfig, ClassifierConfig, ConvSpec, NormConfig, RemnantActivation, RemnantBlockConfig, ToyConfig,
};
use remnet_core::synth::SynthConfig;
use remnet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{IoError, IoResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationDesc {
    #[default]
    None,
    Prelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemnantDesc {
    pub widen_filters: usize,
    #[serde(default = "three")]
    pub kernel_size: usize,
    #[serde(default = "three")]
    pub in_channels: usize,
    #[serde(default)]
    pub activation: ActivationDesc,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDesc {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HeadDesc {
    /// The four-stage RemNet classification block.
    Classifier { layers: Vec<LayerDesc>, pool_window: usize },
    /// Two-stage stand-in classifier.
    Toy { filters: [usize; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormDesc {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for NormDesc {
    fn default() -> Self {
        let n = NormConfig::default();
        Self { eps: n.eps, momentum: n.momentum }
    }
}

/// Everything needed to rebuild a model before loading its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    pub n_class: usize,
    #[serde(default)]
    pub remnant: Vec<RemnantDesc>,
    pub head: HeadDesc,
    #[serde(default)]
    pub norm: NormDesc,
}

fn default_patch() -> usize {
    64
}

impl ModelDescriptor {
    /// Three remnant blocks (64, 128, 256) and the 64-128-256-512 classifier.
    pub fn canonical(n_class: usize) -> Self {
        Self::from_arch(&ArchConfig::canonical(n_class))
    }

    /// Same topology with narrow layers: remnant width 4, classifier
    /// 16-32-64-128. Trains on one CPU core in minutes.
    pub fn desk(n_class: usize) -> Self {
        let mut arch = ArchConfig::canonical(n_class);
        arch.remnant.iter_mut().for_each(|b| b.widen_filters = 4);
        for (i, l) in arch.classifier.layers.iter_mut().enumerate() {
            l.filters = 16 << i;
        }
        Self::from_arch(&arch)
    }

    /// The stand-in classifier, optionally behind three width-4 remnant
    /// blocks.
    pub fn toy(n_class: usize, with_blocks: bool) -> Self {
        Self {
            patch_size: 64,
            n_class,
            remnant: if with_blocks { Self::desk(n_class).remnant } else { Vec::new() },
            head: HeadDesc::Toy { filters: [16, 32] },
            norm: NormDesc::default(),
        }
    }

    pub fn from_arch(arch: &ArchConfig) -> Self {
        Self {
            patch_size: arch.patch_size,
            n_class: arch.classifier.n_class,
            remnant: arch
                .remnant
                .iter()
                .map(|b| RemnantDesc {
                    widen_filters: b.widen_filters,
                    kernel_size: b.kernel_size,
                    in_channels: b.in_channels,
                    activation: match b.activation {
                        RemnantActivation::None => ActivationDesc::None,
                        RemnantActivation::Prelu => ActivationDesc::Prelu,
                    },
                })
                .collect(),
            head: HeadDesc::Classifier {
                layers: arch
                    .classifier
                    .layers
                    .iter()
                    .map(|l| LayerDesc {
                        filters: l.filters,
                        kernel: l.kernel,
                        stride: l.stride,
                    })
                    .collect(),
                pool_window: arch.classifier.pool_window,
            },
            norm: NormDesc {
                eps: arch.norm.eps,
                momentum: arch.norm.momentum,
            },
        }
    }

    pub fn norm(&self) -> NormConfig {
        NormConfig {
            eps: self.norm.eps,
            momentum: self.norm.momentum,
        }
    }

    pub fn remnant_configs(&self) -> Vec<RemnantBlockConfig> {
        self.remnant
            .iter()
            .map(|r| RemnantBlockConfig {
                widen_filters: r.widen_filters,
                kernel_size: r.kernel_size,
                in_channels: r.in_channels,
                activation: match r.activation {
                    ActivationDesc::None => RemnantActivation::None,
                    ActivationDesc::Prelu => RemnantActivation::Prelu,
                },
            })
            .collect()
    }

    /// The core architecture, for classifier heads.
    pub fn arch(&self) -> Option<ArchConfig> {
        let HeadDesc::Classifier { layers, pool_window } = &self.head else {
            return None;
        };
        Some(ArchConfig {
            patch_size: self.patch_size,
            remnant: self.remnant_configs(),
            classifier: ClassifierConfig {
                layers: layers.iter().map(|l| ConvSpec::new(l.filters, l.kernel, l.stride)).collect(),
                pool_window: *pool_window,
                n_class: self.n_class,
            },
            norm: self.norm(),
        })
    }

    pub fn toy_config(&self) -> Option<ToyConfig> {
        let HeadDesc::Toy { filters } = &self.head else {
            return None;
        };
        Some(ToyConfig {
            patch_size: self.patch_size,
            filters: (filters[0], filters[1]),
            n_class: self.n_class,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor serializes")
    }

    pub fn from_toml(text: &str, origin: &Path) -> IoResult<Self> {
        parse_toml(text, origin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub n_models: usize,
    pub devices_per_model: usize,
    pub scenes: usize,
    pub shots_per_scene: usize,
    pub width: usize,
    pub height: usize,
    /// Standard deviation of each device's multiplicative gain field.
    pub prnu_strength: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let c = SynthConfig::default();
        Self {
            n_models: c.n_models,
            devices_per_model: c.devices_per_model,
            scenes: c.scenes,
            shots_per_scene: c.shots_per_scene,
            width: c.width,
            height: c.height,
            prnu_strength: short_f64(c.prnu_strength),
        }
    }
}

/// Widens without exposing binary noise (0.01f32 stays 0.01).
pub(crate) fn short_f64(v: f32) -> f64 {
    v.to_string().parse().expect("float display parses")
}

impl SynthSection {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            n_models: self.n_models,
            devices_per_model: self.devices_per_model,
            scenes: self.scenes,
            shots_per_scene: self.shots_per_scene,
            width: self.width,
            height: self.height,
            prnu_strength: self.prnu_strength as f32,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset manifest; the `--manifest` flag overrides it.
    pub manifest: Option<PathBuf>,
    /// Clusters per image at evaluation (and training unless overridden).
    pub clusters_per_image: usize,
    /// Clusters per training/validation image; defaults to
    /// `clusters_per_image`.
    pub train_clusters_per_image: Option<usize>,
    pub cluster_stride: usize,
    /// Add augmented copies of every training and validation image.
    pub augment: bool,
    pub augment_specs: Vec<String>,
    /// Directory for cached cluster selections, keyed by image content.
    pub cache_dir: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            manifest: None,
            clusters_per_image: 20,
            train_clusters_per_image: None,
            cluster_stride: 64,
            augment: false,
            augment_specs: AugmentationSpec::standard_set().iter().map(ToString::to_string).collect(),
            cache_dir: None,
        }
    }
}

impl DataSection {
    pub fn train_clusters(&self) -> usize {
        self.train_clusters_per_image.unwrap_or(self.clusters_per_image)
    }

    pub fn specs(&self) -> IoResult<Vec<AugmentationSpec>> {
        self.augment_specs
            .iter()
            .map(|s| s.parse::<AugmentationSpec>().map_err(|e| IoError::Constraint(format!("augment_specs: {e}"))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub test_scene_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        let c = SplitConfig::default();
        Self {
            test_scene_fraction: c.test_scene_fraction,
            val_fraction: c.val_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualitySection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for QualitySection {
    fn default() -> Self {
        let q = QualityConstants::default();
        Self {
            alpha: q.alpha,
            beta: q.beta,
            gamma: q.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
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
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            lr_init: t.lr_init,
            lr_decay_factor: t.lr_decay_factor,
            plateau_patience: t.plateau_patience,
            lr_floor: t.lr_floor,
            max_epochs: t.max_epochs,
            min_delta: t.min_delta,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_votes: usize,
    /// Voting numbers for the accuracy-vs-N plot data.
    pub sweep: Vec<usize>,
    /// Also sweep over the lowest-quality clusters of each image.
    pub poor_quality_sweep: bool,
    /// Also score augmented copies of every image and report the weighted
    /// unaltered/manipulated score.
    pub manipulated: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_votes: 20,
            sweep: vec![1, 5, 10, 20],
            poor_quality_sweep: true,
            manipulated: false,
        }
    }
}

/// A complete, replayable run description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Architecture descriptor file, used when `model` is absent.
    pub arch_path: Option<PathBuf>,
    pub synth: SynthSection,
    pub data: DataSection,
    pub split: SplitSection,
    pub quality: QualitySection,
    pub train: TrainSection,
    pub eval: EvalSection,
    /// Inline architecture; the canonical RemNet when neither this nor
    /// `arch_path` is given.
    pub model: Option<ModelDescriptor>,
}

impl RunConfig {
    pub fn load(path: &Path) -> IoResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        parse_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn quality(&self) -> QualityConstants {
        QualityConstants {
            alpha: self.quality.alpha,
            beta: self.quality.beta,
            gamma: self.quality.gamma,
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            test_scene_fraction: self.split.test_scene_fraction,
            val_fraction: self.split.val_fraction,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            lr_init: t.lr_init,
            lr_decay_factor: t.lr_decay_factor,
            plateau_patience: t.plateau_patience,
            lr_floor: t.lr_floor,
            max_epochs: t.max_epochs,
            min_delta: t.min_delta,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            seed: self.seed,
        }
    }

    pub fn voting(&self, n_votes: usize) -> VotingConfig {
        VotingConfig {
            n_votes,
            stride: self.data.cluster_stride,
            quality: self.quality(),
            ..VotingConfig::default()
        }
    }

    /// Inline model, else the descriptor file, else canonical RemNet.
    pub fn resolve_model(&self, n_class: usize) -> IoResult<ModelDescriptor> {
        if let Some(m) = &self.model {
            return Ok(m.clone());
        }
        if let Some(p) = &self.arch_path {
            let text = std::fs::read_to_string(p).map_err(|e| IoError::io(p, e))?;
            return ModelDescriptor::from_toml(&text, p);
        }
        Ok(ModelDescriptor::canonical(n_class))
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> IoResult<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map_or(0, |s| text[..s.start].matches('\n').count() + 1);
        IoError::schema(origin, line, e.message().to_string())
    })
}
