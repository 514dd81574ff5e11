use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::filter_plane;
use crate::data::{Image, JpegCodec};
use crate::derive_seed;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    pub const ALL: [Self; 4] = [Self::Rggb, Self::Bggr, Self::Grbg, Self::Gbrg];

    /// Colour channel sampled at a sensor site.
    pub fn channel_at(self, row: usize, col: usize) -> usize {
        let layout = match self {
            Self::Rggb => [0, 1, 1, 2],
            Self::Bggr => [2, 1, 1, 0],
            Self::Grbg => [1, 0, 2, 1],
            Self::Gbrg => [1, 2, 0, 1],
        };
        layout[(row % 2) * 2 + col % 2]
    }
}

/// Interpolation kernel for normalized-convolution demosaicing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemosaicKernel {
    /// 3x3 tent: classic bilinear.
    Bilinear,
    /// 5x5 binomial: smoother, softer edges.
    Binomial5,
    /// 2x2 box: nearest-neighbour replication.
    Box2,
    /// 5x5 with negative side lobes: interpolation with edge overshoot.
    Sharp5,
}

impl DemosaicKernel {
    pub const ALL: [Self; 4] = [Self::Bilinear, Self::Binomial5, Self::Box2, Self::Sharp5];

    /// Weights and size; `Box2` is embedded in a 3x3 grid.
    fn weights(self) -> (Vec<f32>, usize) {
        let outer = |v: &[f32]| v.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect::<Vec<_>>();
        match self {
            Self::Bilinear => (outer(&[1.0, 2.0, 1.0]), 3),
            Self::Binomial5 => (outer(&[1.0, 4.0, 6.0, 4.0, 1.0]), 5),
            Self::Box2 => (alloc::vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0], 3),
            Self::Sharp5 => (outer(&[-1.0, 4.0, 10.0, 4.0, -1.0]), 5),
        }
    }
}

/// Spectral emphasis of the sensor noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseShape {
    Low,
    Mid,
    High,
}

impl NoiseShape {
    pub const ALL: [Self; 3] = [Self::Low, Self::Mid, Self::High];

    /// 5x5 shaping kernel with unit energy, so filtered white noise keeps
    /// unit variance.
    fn kernel(self) -> Vec<f32> {
        let outer = |v: [f32; 5]| v.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect::<Vec<_>>();
        let b5 = outer([1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0]);
        let b3 = outer([0.0, 0.25, 0.5, 0.25, 0.0]);
        let mut k: Vec<f32> = match self {
            Self::Low => b5,
            Self::Mid => b3.iter().zip(&b5).map(|(a, b)| a - b).collect(),
            Self::High => b3.iter().enumerate().map(|(i, a)| if i == 12 { 1.0 - a } else { -a }).collect(),
        };
        let energy = libm::sqrtf(k.iter().map(|v| v * v).sum());
        k.iter_mut().for_each(|v| *v /= energy);
        k
    }
}

/// IJG-style quality factor for a quantization-table scale. Non-positive
/// scales mean no JPEG compression.
pub fn jpeg_quality(scale: f64) -> Option<u8> {
    if scale <= 0.0 {
        return None;
    }
    let q = if scale <= 1.0 { 100.0 - 50.0 * scale } else { 50.0 / scale };
    Some(libm::round(q).clamp(1.0, 100.0) as u8)
}

/// Processing pipeline shared by every device of a camera model.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModelSpec {
    pub model_id: usize,
    pub name: String,
    pub bayer: BayerPattern,
    pub demosaic: DemosaicKernel,
    /// Row-major, applied as `out = M * rgb`.
    pub color_matrix: [[f32; 3]; 3],
    pub noise_shape: NoiseShape,
    pub noise_sigma: f32,
    pub jpeg_quant_scale: f64,
}

/// One physical camera: a model plus its own sensor non-uniformity.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub device_id: String,
    pub model_id: usize,
    pub prnu_seed: u64,
    /// Standard deviation of the multiplicative gain field.
    pub prnu_strength: f32,
}

/// Saturation `s` blended with a luma projection, then per-channel white
/// balance gains.
fn color_matrix(saturation: f32, gains: [f32; 3]) -> [[f32; 3]; 3] {
    let luma = [0.299, 0.587, 0.114];
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let id = if i == j { 1.0 } else { 0.0 };
            *v = gains[i] * (saturation * id + (1.0 - saturation) * luma[j]);
        }
    }
    m
}

/// `n` camera models whose pipelines differ pairwise in several components.
pub fn default_models(n: usize) -> Vec<CameraModelSpec> {
    (0..n)
        .map(|i| {
            let tilt = 0.05 * ((i % 4) as f32 - 1.5);
            // offsetting by i / 3 keeps model 3 from repeating model 0
            let j = i + i / 3;
            CameraModelSpec {
                model_id: i,
                name: alloc::format!("model{i}"),
                bayer: BayerPattern::ALL[i % 4],
                demosaic: DemosaicKernel::ALL[i % 4],
                color_matrix: color_matrix(0.85 + 0.1 * (i % 4) as f32 - 0.03 * (i / 4) as f32, [1.0 + tilt, 1.0, 1.0 - tilt]),
                noise_shape: NoiseShape::ALL[(j + 2) % 3],
                noise_sigma: 0.012 + 0.004 * (j % 3) as f32,
                jpeg_quant_scale: [0.3, 0.5, 0.4, 0.6][i % 4],
            }
        })
        .collect()
}

fn gaussian_plane(len: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Samples `scene` through the colour filter array and interpolates the
/// missing colours by normalized convolution with the demosaic kernel.
pub fn mosaic_demosaic(scene: &Image, bayer: BayerPattern, demosaic: DemosaicKernel) -> Vec<Vec<f32>> {
    let (w, h) = (scene.width(), scene.height());
    let n = w * h;
    let mut raw = alloc::vec![0.0f32; n];
    let mut mask = [alloc::vec![0.0f32; n], alloc::vec![0.0f32; n], alloc::vec![0.0f32; n]];
    for row in 0..h {
        for col in 0..w {
            let ch = bayer.channel_at(row, col);
            raw[row * w + col] = scene.get(row, col, ch);
            mask[ch][row * w + col] = 1.0;
        }
    }
    let (kernel, k) = demosaic.weights();
    mask.iter()
        .map(|m| {
            let sampled: Vec<f32> = raw.iter().zip(m).map(|(r, m)| r * m).collect();
            let num = filter_plane(&sampled, w, h, &kernel, k);
            let den = filter_plane(m, w, h, &kernel, k);
            num.iter().zip(&den).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect()
        })
        .collect()
}

/// The device's per-pixel multiplicative gain, `1 + strength * N(0, 1)`,
/// row-major.
pub fn prnu_gain(device: &DeviceSpec, width: usize, height: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[device.prnu_seed, width as u64, height as u64]));
    gaussian_plane(width * height, &mut rng).into_iter().map(|g| 1.0 + device.prnu_strength * g).collect()
}

/// Photographs an ideal scene: colour filter array sampling, demosaicing,
/// multiplicative device gain field, colour matrix, shaped additive noise,
/// 8-bit quantization, and an optional JPEG round trip.
pub fn apply_pipeline<C: JpegCodec + ?Sized>(
    scene: &Image,
    model: &CameraModelSpec,
    device: &DeviceSpec,
    shot_seed: u64,
    codec: &C,
) -> Result<Image> {
    let (w, h) = (scene.width(), scene.height());
    let n = w * h;
    let mut planes = mosaic_demosaic(scene, model.bayer, model.demosaic);
    let gain = prnu_gain(device, w, h);
    for plane in &mut planes {
        for (v, g) in plane.iter_mut().zip(&gain) {
            *v *= g;
        }
    }

    let m = &model.color_matrix;
    let mut rng = ChaCha8Rng::seed_from_u64(shot_seed);
    let shaping = model.noise_shape.kernel();
    let noise: Vec<Vec<f32>> = (0..3).map(|_| filter_plane(&gaussian_plane(n, &mut rng), w, h, &shaping, 5)).collect();
    let mut data = alloc::vec![0.0f32; n * 3];
    for i in 0..n {
        let px = [planes[0][i], planes[1][i], planes[2][i]];
        for c in 0..3 {
            let v = m[c][0] * px[0] + m[c][1] * px[1] + m[c][2] * px[2] + model.noise_sigma * noise[c][i];
            data[i * 3 + c] = v.clamp(0.0, 1.0);
        }
    }
    let img = Image::new(w, h, data)?.quantized();
    match jpeg_quality(model.jpeg_quant_scale) {
        Some(q) => codec.round_trip(&img, q),
        None => Ok(img),
    }
}
