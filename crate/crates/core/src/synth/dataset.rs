use alloc::format;
use alloc::vec::Vec;

use super::camera::{apply_pipeline, default_models, CameraModelSpec, DeviceSpec};
use super::scene::{render_scene, SceneSpec};
use crate::data::{Image, ImageRecord, JpegCodec};
use crate::derive_seed;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_models: usize,
    pub devices_per_model: usize,
    pub scenes: usize,
    /// Every device photographs every scene this many times.
    pub shots_per_scene: usize,
    pub width: usize,
    pub height: usize,
    pub prnu_strength: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_models: 4,
            devices_per_model: 3,
            scenes: 40,
            shots_per_scene: 1,
            width: 512,
            height: 512,
            prnu_strength: 0.01,
            seed: 0,
        }
    }
}

/// The full specification of a generated dataset. Images are rendered on
/// demand, one index at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub models: Vec<CameraModelSpec>,
    pub devices: Vec<DeviceSpec>,
    pub scenes: Vec<SceneSpec>,
}

impl SynthDataset {
    pub fn new(config: SynthConfig) -> Result<Self> {
        if config.n_models < 2 || config.devices_per_model == 0 || config.scenes == 0 || config.shots_per_scene == 0 {
            return Err(invalid("synth", "need at least 2 models and one device, scene and shot"));
        }
        if config.width < 64 || config.height < 64 {
            return Err(invalid("synth", "images must be at least 64x64"));
        }
        let models = default_models(config.n_models);
        let devices = (0..config.n_models)
            .flat_map(|m| (0..config.devices_per_model).map(move |d| (m, d)))
            .map(|(m, d)| DeviceSpec {
                device_id: format!("m{m}d{d}"),
                model_id: m,
                prnu_seed: derive_seed(&[config.seed, 1, m as u64, d as u64]),
                prnu_strength: config.prnu_strength,
            })
            .collect();
        let scenes = (0..config.scenes)
            .map(|s| SceneSpec {
                scene_id: s,
                seed: derive_seed(&[config.seed, 2]),
            })
            .collect();
        Ok(Self {
            config,
            models,
            devices,
            scenes,
        })
    }

    pub fn len(&self) -> usize {
        self.devices.len() * self.scenes.len() * self.config.shots_per_scene
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coords(&self, index: usize) -> (usize, usize, usize) {
        let shots = self.config.shots_per_scene;
        let per_device = self.scenes.len() * shots;
        (index / per_device, (index % per_device) / shots, index % shots)
    }

    /// Manifest row of image `index` (device-major, then scene, then shot).
    pub fn record(&self, index: usize) -> ImageRecord {
        let (d, s, shot) = self.coords(index);
        let dev = &self.devices[d];
        ImageRecord {
            path: format!("{}/{}/s{:03}_{}.png", self.models[dev.model_id].name, dev.device_id, s, shot),
            model_label: dev.model_id,
            device_id: dev.device_id.clone(),
            scene_id: format!("s{s:03}"),
            width: self.config.width,
            height: self.config.height,
        }
    }

    pub fn scene(&self, scene: usize) -> Image {
        render_scene(&self.scenes[scene], self.config.width, self.config.height)
    }

    /// Photographs a pre-rendered scene with the device of image `index`.
    pub fn capture<C: JpegCodec + ?Sized>(&self, index: usize, scene: &Image, codec: &C) -> Result<Image> {
        let (d, s, shot) = self.coords(index);
        let dev = &self.devices[d];
        let shot_seed = derive_seed(&[self.config.seed, 3, d as u64, s as u64, shot as u64]);
        apply_pipeline(scene, &self.models[dev.model_id], dev, shot_seed, codec)
    }

    pub fn render<C: JpegCodec + ?Sized>(&self, index: usize, codec: &C) -> Result<(ImageRecord, Image)> {
        let (_, s, _) = self.coords(index);
        Ok((self.record(index), self.capture(index, &self.scene(s), codec)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_cover_every_device_scene_pair() {
        let ds = SynthDataset::new(SynthConfig {
            n_models: 2,
            devices_per_model: 2,
            scenes: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(ds.len(), 12);
        let mut pairs: Vec<_> = (0..ds.len()).map(|i| ds.record(i)).map(|r| (r.device_id, r.scene_id)).collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 12);
        assert_eq!(ds.record(11).model_label, 1);
        assert_eq!(ds.record(0).path, "model0/m0d0/s000_0.png");
    }
}
