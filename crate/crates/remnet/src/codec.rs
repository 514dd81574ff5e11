//! Image files and the baseline JPEG codec.

use std::io::Cursor;
use std::path::Path;

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat, RgbImage};
use remnet_core::data::{Image, JpegCodec};

use crate::error::{IoError, IoResult};

/// JPEG round trip through the `image` crate's baseline encoder/decoder.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineJpeg;

impl JpegCodec for BaselineJpeg {
    fn round_trip(&self, image: &Image, quality: u8) -> remnet_core::Result<Image> {
        let codec_err = |e: image::ImageError| remnet_core::Error::Codec(e.to_string());
        let mut buf = Vec::new();
        JpegEncoder::new_with_quality(&mut buf, quality.clamp(1, 100))
            .encode(&image.to_u8(), image.width() as u32, image.height() as u32, ExtendedColorType::Rgb8)
            .map_err(codec_err)?;
        let decoded = image::load_from_memory_with_format(&buf, ImageFormat::Jpeg).map_err(codec_err)?.to_rgb8();
        Image::from_u8(decoded.width() as usize, decoded.height() as usize, decoded.as_raw())
    }
}

/// Decodes any supported file to a [0, 1] RGB image.
pub fn read_image(path: &Path) -> IoResult<Image> {
    let rgb = image::open(path).map_err(|e| IoError::image(path, e))?.to_rgb8();
    Ok(Image::from_u8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())?)
}

/// Writes an 8-bit PNG (lossless).
pub fn write_png(path: &Path, image: &Image) -> IoResult<()> {
    let buf = encode_png(image)?;
    std::fs::write(path, buf).map_err(|e| IoError::io(path, e))
}

pub fn encode_png(image: &Image) -> IoResult<Vec<u8>> {
    let rgb = RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_u8()).expect("buffer matches dimensions");
    let mut buf = Cursor::new(Vec::new());
    rgb.write_to(&mut buf, ImageFormat::Png).map_err(|e| IoError::image(Path::new("<memory>"), e))?;
    Ok(buf.into_inner())
}
