use crate::error::{Error, Result};

use super::Image;

/// Constants of the cluster quality metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityConstants {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for QualityConstants {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            beta: 4.0,
            gamma: libm::log(0.01),
        }
    }
}

/// Texture-favouring quality of a region with values in [0, 1]:
///
/// `Q = 1/3 Σ_c [α·β·(μ_c − μ_c²) + (1 − α)·(1 − exp(γ·σ_c))]`
///
/// with per-channel mean `μ_c` and population standard deviation `σ_c`.
/// Flat dark or saturated regions score near 0.
pub fn quality_score(pixels: &Image, k: &QualityConstants) -> Result<f64> {
    let data = pixels.data();
    if let Some(&bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::PixelRange(bad));
    }
    if data.is_empty() {
        return Err(Error::Empty("quality_score region"));
    }
    let n = (data.len() / 3) as f64;
    let mut sum = [0.0f64; 3];
    for px in data.chunks_exact(3) {
        for c in 0..3 {
            sum[c] += px[c] as f64;
        }
    }
    let mean = sum.map(|s| s / n);
    let mut ss = [0.0f64; 3];
    for px in data.chunks_exact(3) {
        for c in 0..3 {
            let d = px[c] as f64 - mean[c];
            ss[c] += d * d;
        }
    }
    let mut q = 0.0;
    for c in 0..3 {
        let sigma = libm::sqrt(ss[c] / n);
        let mu = mean[c];
        q += k.alpha * k.beta * (mu - mu * mu) + (1.0 - k.alpha) * (1.0 - libm::exp(k.gamma * sigma));
    }
    Ok(q / 3.0)
}
