//! Synthetic datasets on disk and image loading for manifests.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use remnet_core::data::{Image, ImageRecord};
use remnet_core::synth::{SynthConfig, SynthDataset};
use serde::Serialize;

use crate::codec::{read_image, write_png, BaselineJpeg};
use crate::config::{short_f64, SynthSection};
use crate::error::{IoError, IoResult};
use crate::manifest::{resolve, write_manifest};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const DESCRIPTOR_FILE: &str = "dataset.toml";

#[derive(Serialize)]
struct Descriptor<'a> {
    seed: u64,
    synth: SynthSection,
    models: Vec<ModelEntry<'a>>,
    devices: Vec<DeviceEntry<'a>>,
    scenes: Vec<SceneEntry>,
}

#[derive(Serialize)]
struct ModelEntry<'a> {
    model_id: usize,
    name: &'a str,
    bayer: String,
    demosaic: String,
    color_matrix: [[f32; 3]; 3],
    noise_shape: String,
    noise_sigma: f64,
    jpeg_quant_scale: f64,
}

#[derive(Serialize)]
struct DeviceEntry<'a> {
    device_id: &'a str,
    model_id: usize,
    prnu_seed: String,
    prnu_strength: f64,
}

#[derive(Serialize)]
struct SceneEntry {
    scene_id: usize,
    seed: String,
}

// TOML integers are signed, so derived 64-bit seeds are written as hex
fn hex(v: u64) -> String {
    format!("{v:#018x}")
}

/// Every seed and pipeline parameter of `ds`, as TOML.
pub fn describe(ds: &SynthDataset) -> String {
    let c = &ds.config;
    let d = Descriptor {
        seed: c.seed,
        synth: SynthSection {
            n_models: c.n_models,
            devices_per_model: c.devices_per_model,
            scenes: c.scenes,
            shots_per_scene: c.shots_per_scene,
            width: c.width,
            height: c.height,
            prnu_strength: short_f64(c.prnu_strength),
        },
        models: ds
            .models
            .iter()
            .map(|m| ModelEntry {
                model_id: m.model_id,
                name: &m.name,
                bayer: format!("{:?}", m.bayer),
                demosaic: format!("{:?}", m.demosaic),
                color_matrix: m.color_matrix,
                noise_shape: format!("{:?}", m.noise_shape),
                noise_sigma: short_f64(m.noise_sigma),
                jpeg_quant_scale: m.jpeg_quant_scale,
            })
            .collect(),
        devices: ds
            .devices
            .iter()
            .map(|d| DeviceEntry {
                device_id: &d.device_id,
                model_id: d.model_id,
                prnu_seed: hex(d.prnu_seed),
                prnu_strength: short_f64(d.prnu_strength),
            })
            .collect(),
        scenes: ds.scenes.iter().map(|s| SceneEntry {
                scene_id: s.scene_id,
                seed: hex(s.seed),
            }).collect(),
    };
    toml::to_string(&d).expect("descriptor serializes")
}

/// Renders every image of `config` into `out` with a manifest and a
/// descriptor. Scenes are processed in parallel; on failure everything
/// written so far is removed.
pub fn generate(config: SynthConfig, out: &Path) -> IoResult<Vec<ImageRecord>> {
    let ds = SynthDataset::new(config)?;
    let fresh_dir = !out.exists();
    std::fs::create_dir_all(out).map_err(|e| IoError::io(out, e))?;
    let result = write_all(&ds, out);
    if result.is_err() {
        if fresh_dir {
            let _ = std::fs::remove_dir_all(out);
        } else {
            for m in &ds.models {
                let _ = std::fs::remove_dir_all(out.join(&m.name));
            }
            let _ = std::fs::remove_file(out.join(MANIFEST_FILE));
            let _ = std::fs::remove_file(out.join(DESCRIPTOR_FILE));
        }
    }
    result
}

fn write_all(ds: &SynthDataset, out: &Path) -> IoResult<Vec<ImageRecord>> {
    let per_scene = ds.len() / ds.scenes.len();
    let shots = ds.config.shots_per_scene;
    // index of (device d, scene s, shot k) is (d * scenes + s) * shots + k
    let index = |d: usize, s: usize, k: usize| (d * ds.scenes.len() + s) * shots + k;
    (0..ds.scenes.len()).into_par_iter().try_for_each(|s| {
        let scene = ds.scene(s);
        (0..per_scene).try_for_each(|j| {
            let i = index(j / shots, s, j % shots);
            let rec = ds.record(i);
            let img = ds.capture(i, &scene, &BaselineJpeg)?;
            let path = out.join(&rec.path);
            let dir = path.parent().expect("record paths have a directory");
            std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
            write_png(&path, &img)
        })
    })?;
    let records: Vec<ImageRecord> = (0..ds.len()).map(|i| ds.record(i)).collect();
    let desc = out.join(DESCRIPTOR_FILE);
    std::fs::write(&desc, describe(ds)).map_err(|e| IoError::io(&desc, e))?;
    write_manifest(&out.join(MANIFEST_FILE), &records)?;
    Ok(records)
}

/// Decodes the images of `records` in parallel, checking their recorded
/// dimensions.
pub fn load_images(manifest: &Path, records: &[ImageRecord]) -> IoResult<Vec<Arc<Image>>> {
    records
        .par_iter()
        .map(|r| {
            let path: PathBuf = resolve(manifest, r);
            let img = read_image(&path)?;
            if img.width() != r.width || img.height() != r.height {
                return Err(IoError::Constraint(format!(
                    "{}: manifest says {}x{}, file is {}x{}",
                    path.display(),
                    r.width,
                    r.height,
                    img.width(),
                    img.height()
                )));
            }
            Ok(Arc::new(img))
        })
        .collect()
}
