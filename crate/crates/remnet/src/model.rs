//! Runtime choice between the two model families a descriptor can build.

use remnet_core::data::{Image, JpegCodec};
use remnet_core::eval::PatchClassifier;
use remnet_core::model::{CascadeModel, NormConfig, RemNet, ToyClassifier};
use remnet_core::param::ParamStore;
use remnet_core::train::{train, EpochRecord, TrainConfig, TrainOutcome, TrainSample};
use remnet_core::Result;

use crate::config::ModelDescriptor;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    RemNet(RemNet<f32>),
    Toy(CascadeModel<f32, ToyClassifier>),
}

impl AnyModel {
    pub fn build(desc: &ModelDescriptor, seed: u64) -> Result<Self> {
        if let Some(arch) = desc.arch() {
            return Ok(Self::RemNet(RemNet::from_config(&arch, seed)?));
        }
        let toy = desc.toy_config().expect("descriptor has a head");
        let norm: NormConfig = desc.norm();
        Ok(Self::Toy(CascadeModel::build(&desc.remnant_configs(), norm, seed, |store, rng| {
            ToyClassifier::new(store, "toy", toy, norm, rng)
        })?))
    }

    pub fn store(&self) -> &ParamStore<f32> {
        match self {
            Self::RemNet(m) => &m.store,
            Self::Toy(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f32> {
        match self {
            Self::RemNet(m) => &mut m.store,
            Self::Toy(m) => &mut m.store,
        }
    }

    pub fn train(&mut self, train_set: &[TrainSample], val: &[TrainSample], cfg: &TrainConfig, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
        match self {
            Self::RemNet(m) => train(m, train_set, val, cfg, on_epoch),
            Self::Toy(m) => train(m, train_set, val, cfg, on_epoch),
        }
    }
}

impl PatchClassifier for AnyModel {
    fn n_class(&self) -> usize {
        match self {
            Self::RemNet(m) => m.n_class(),
            Self::Toy(m) => m.n_class(),
        }
    }

    fn classify(&self, patches: &[Image]) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::RemNet(m) => m.classify(patches),
            Self::Toy(m) => m.classify(patches),
        }
    }
}

/// Unused-codec placeholder for pipelines that never compress.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoJpeg;

impl JpegCodec for NoJpeg {
    fn round_trip(&self, _: &Image, _: u8) -> Result<Image> {
        Err(remnet_core::Error::Codec("JPEG disabled".into()))
    }
}
