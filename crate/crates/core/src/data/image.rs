use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// RGB image, row-major, channels interleaved, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(invalid(
                "image",
                alloc::format!("{width}x{height} RGB needs {} values, got {}", width * height * 3, data.len()),
            ));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = vec![0.0; width * height * 3];
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data[(y * width + x) * 3 + c] = f(y, x, c);
                }
            }
        }
        Self { width, height, data }
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// 8-bit quantization with rounding and clamping.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    /// Rounds every value to the nearest multiple of 1/255 in [0, 1].
    pub fn quantized(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| quantize_u8(v) as f32 / 255.0).collect(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, c: usize) -> f32 {
        self.data[(row * self.width + col) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, c: usize, v: f32) {
        self.data[(row * self.width + col) * 3 + c] = v;
    }

    /// Copies the `height x width` region whose top-left pixel is
    /// `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return Err(invalid(
                "crop",
                alloc::format!("{height}x{width} at ({row}, {col}) exceeds {}x{}", self.height, self.width),
            ));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for r in row..row + height {
            let start = (r * self.width + col) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Self { width, height, data })
    }

    /// `[height, width, 3]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[self.height, self.width, 3], self.data.clone()).expect("image layout")
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[inline]
pub(crate) fn quantize_u8(v: f32) -> u8 {
    let s = v * 255.0 + 0.5;
    if s <= 0.0 {
        0
    } else if s >= 255.0 {
        255
    } else {
        s as u8
    }
}
