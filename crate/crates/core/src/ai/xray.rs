//! Image intake for the X-ray classifier: decode, grey-scale, resize.

use image::imageops::FilterType;
use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use super::clients::{PreparedImage, XRAY_SIDE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormatTag {
    /// Pre-extracted pixel data: `rows` (u32 LE), `cols` (u32 LE), then
    /// `rows * cols` 8-bit grey values row by row.
    DicomPixelData,
    Png,
    Jpeg,
}

impl ImageFormatTag {
    pub fn content_type(self) -> &'static str {
        match self {
            ImageFormatTag::DicomPixelData => "application/octet-stream",
            ImageFormatTag::Png => "image/png",
            ImageFormatTag::Jpeg => "image/jpeg",
        }
    }
}

const MAX_SIDE: u32 = 8192;

fn undecodable(msg: impl Into<String>) -> Error {
    Error::field("image", msg)
}

fn decode_pixel_data(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 8 {
        return Err(undecodable("pixel data header truncated"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if rows == 0 || cols == 0 || rows > MAX_SIDE || cols > MAX_SIDE {
        return Err(undecodable(format!("implausible pixel dimensions {rows}x{cols}")));
    }
    let need = rows as usize * cols as usize;
    let body = &bytes[8..];
    if body.len() != need {
        return Err(undecodable(format!(
            "expected {need} pixel bytes, found {}",
            body.len()
        )));
    }
    GrayImage::from_raw(cols, rows, body.to_vec()).ok_or_else(|| undecodable("pixel buffer mismatch"))
}

/// Encodes grey pixels in the pixel-data layout.
pub fn encode_pixel_data(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + img.as_raw().len());
    out.extend_from_slice(&img.height().to_le_bytes());
    out.extend_from_slice(&img.width().to_le_bytes());
    out.extend_from_slice(img.as_raw());
    out
}

/// Decodes `bytes` and produces the 224x224 grey classifier input.
pub fn prepare_image(bytes: &[u8], format: ImageFormatTag, source_name: Option<&str>) -> Result<PreparedImage> {
    let grey = match format {
        ImageFormatTag::DicomPixelData => decode_pixel_data(bytes)?,
        ImageFormatTag::Png | ImageFormatTag::Jpeg => {
            let fmt = if format == ImageFormatTag::Png {
                ImageFormat::Png
            } else {
                ImageFormat::Jpeg
            };
            image::load_from_memory_with_format(bytes, fmt)
                .map_err(|e| undecodable(format!("cannot decode image: {e}")))?
                .to_luma8()
        }
    };
    let resized = image::imageops::resize(&grey, XRAY_SIDE, XRAY_SIDE, FilterType::Triangle);
    Ok(PreparedImage {
        width: XRAY_SIDE,
        height: XRAY_SIDE,
        pixels: resized.as_raw().iter().map(|&p| f32::from(p) / 255.0).collect(),
        source_name: source_name.map(str::to_owned),
    })
}
