//! Synthetic multi-camera dataset: procedural scenes photographed by
//! simulated devices whose processing pipelines leave model-specific traces.

mod camera;
mod dataset;
mod scene;

pub use camera::{
    apply_pipeline, default_models, jpeg_quality, mosaic_demosaic, prnu_gain, BayerPattern, CameraModelSpec, DemosaicKernel, DeviceSpec,
    NoiseShape,
};
pub use dataset::{SynthConfig, SynthDataset};
pub use scene::{render_scene, SceneSpec};

use alloc::vec::Vec;

/// 2-D correlation with edge replication; `kernel` is square and odd.
pub(crate) fn filter_plane(plane: &[f32], width: usize, height: usize, kernel: &[f32], k: usize) -> Vec<f32> {
    let r = (k / 2) as isize;
    let mut out = alloc::vec![0.0f32; plane.len()];
    for row in 0..height {
        for col in 0..width {
            let mut acc = 0.0;
            for u in 0..k {
                let rr = (row as isize + u as isize - r).clamp(0, height as isize - 1) as usize;
                for v in 0..k {
                    let cc = (col as isize + v as isize - r).clamp(0, width as isize - 1) as usize;
                    acc += kernel[u * k + v] * plane[rr * width + cc];
                }
            }
            out[row * width + col] = acc;
        }
    }
    out
}
