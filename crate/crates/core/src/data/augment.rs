use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::Image;
use crate::error::{invalid, Error, Result};

/// Baseline JPEG encode + decode, provided by the IO layer.
pub trait JpegCodec {
    fn round_trip(&self, image: &Image, quality: u8) -> Result<Image>;
}

/// One post-processing operation applied to a whole image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentationSpec {
    None,
    /// JPEG round trip at this quality factor (1..=100).
    Jpeg(u8),
    /// Bicubic rescale of both dimensions, factor in (0, 8].
    Rescale(f64),
    /// `out = in^gamma`, gamma in (0, 10].
    Gamma(f64),
}

impl AugmentationSpec {
    /// JPEG QF 70/80/90, rescale 0.5/0.8/1.5/2.0, gamma 0.8/1.2.
    pub fn standard_set() -> [Self; 9] {
        use AugmentationSpec::*;
        [
            Jpeg(70),
            Jpeg(80),
            Jpeg(90),
            Rescale(0.5),
            Rescale(0.8),
            Rescale(1.5),
            Rescale(2.0),
            Gamma(0.8),
            Gamma(1.2),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            AugmentationSpec::None => true,
            AugmentationSpec::Jpeg(q) => (1..=100).contains(&q),
            AugmentationSpec::Rescale(f) => f.is_finite() && f > 0.0 && f <= 8.0,
            AugmentationSpec::Gamma(g) => g.is_finite() && g > 0.0 && g <= 10.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid("augment", alloc::format!("unsupported factor in {self}")))
        }
    }
}

impl fmt::Display for AugmentationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentationSpec::None => f.write_str("none"),
            AugmentationSpec::Jpeg(q) => write!(f, "jpeg:{q}"),
            AugmentationSpec::Rescale(s) => write!(f, "rescale:{s}"),
            AugmentationSpec::Gamma(g) => write!(f, "gamma:{g}"),
        }
    }
}

impl FromStr for AugmentationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid("augment", alloc::format!("cannot parse `{s}` (want none | jpeg:QF | rescale:F | gamma:G)"));
        let spec = match s.trim().split_once(':') {
            None if s.trim() == "none" => AugmentationSpec::None,
            Some(("jpeg", v)) => AugmentationSpec::Jpeg(v.parse().map_err(|_| bad())?),
            Some(("rescale", v)) => AugmentationSpec::Rescale(v.parse().map_err(|_| bad())?),
            Some(("gamma", v)) => AugmentationSpec::Gamma(v.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<AugmentationSpec> for String {
    fn from(s: AugmentationSpec) -> String {
        alloc::format!("{s}")
    }
}

pub fn augment<C: JpegCodec + ?Sized>(image: &Image, spec: AugmentationSpec, codec: &C) -> Result<Image> {
    spec.validate()?;
    match spec {
        AugmentationSpec::None => Ok(image.clone()),
        AugmentationSpec::Jpeg(q) => codec.round_trip(image, q),
        AugmentationSpec::Rescale(f) => bicubic_rescale(image, f),
        AugmentationSpec::Gamma(g) => Ok(gamma_correct(image, g)),
    }
}

/// `in^gamma` per channel, re-quantized to 8 bits.
pub fn gamma_correct(image: &Image, gamma: f64) -> Image {
    let g = gamma as f32;
    image.map(|v| libm::powf(v.clamp(0.0, 1.0), g)).quantized()
}

/// Keys cubic convolution kernel with a = -0.5.
fn cubic(x: f32) -> f32 {
    let a = -0.5f32;
    let x = libm::fabsf(x);
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Per output index: four source taps (edge-clamped) and their weights.
fn taps(out_len: usize, in_len: usize, factor: f64) -> Vec<([usize; 4], [f32; 4])> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor - 0.5;
            let base = libm::floor(src);
            let t = (src - base) as f32;
            let mut idx = [0usize; 4];
            let mut w = [0f32; 4];
            for k in 0..4 {
                let i = base as i64 - 1 + k as i64;
                idx[k] = i.clamp(0, in_len as i64 - 1) as usize;
                w[k] = cubic(t - (k as f32 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resampling of both axes by `factor`, output size
/// `round(extent * factor)`, clamped to [0, 1] and re-quantized to 8 bits.
pub fn bicubic_rescale(image: &Image, factor: f64) -> Result<Image> {
    AugmentationSpec::Rescale(factor).validate()?;
    let (w, h) = (image.width(), image.height());
    let ow = (libm::round(w as f64 * factor) as usize).max(1);
    let oh = (libm::round(h as f64 * factor) as usize).max(1);
    let tx = taps(ow, w, factor);
    let ty = taps(oh, h, factor);
    let src = image.data();

    let mut horiz = vec![0f32; h * ow * 3];
    for r in 0..h {
        for (x, (idx, wt)) in tx.iter().enumerate() {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * src[(r * w + idx[k]) * 3 + c];
                }
                horiz[(r * ow + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0f32; oh * ow * 3];
    for (y, (idx, wt)) in ty.iter().enumerate() {
        for x in 0..ow {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wt[k] * horiz[(idx[k] * ow + x) * 3 + c];
                }
                out[(y * ow + x) * 3 + c] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image::new(ow, oh, out)?.quantized())
}
