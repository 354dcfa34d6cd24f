//! Reading and writing images.
//!
//! Supported: PNG (8/16-bit gray, RGB, RGBA), binary PGM/PPM, and the NPF1
//! float container (`N2VF` magic, little-endian `u32` height, width,
//! channels, then `f32` samples row-major with interleaved channels).

use std::fs;
use std::path::Path;

use image::{DynamicImage, ImageError, ImageFormat};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const NPF1_MAGIC: &[u8; 4] = b"N2VF";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn peak(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::InvalidArgument(format!(
                "bit depth must be 8 or 16, got {other}"
            ))),
        }
    }
}

/// Loads an image, dividing integer samples by the format peak (255 or 65535).
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    load_image_with_peak(path, None)
}

/// Like [`load_image`], but integer samples are divided by `peak` when given
/// (e.g. 4095 for 12-bit data stored in 16-bit containers).
pub fn load_image_with_peak(path: &Path, peak: Option<f64>) -> Result<ImageBuffer> {
    let bytes = fs::read(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.starts_with(NPF1_MAGIC) {
        return decode_npf(path, &bytes);
    }
    let format = image::guess_format(&bytes).map_err(|_| Error::UnsupportedFormat {
        path: path.to_path_buf(),
        reason: "unrecognized file signature".into(),
    })?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("{format:?} is not supported"),
        });
    }
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| map_decode_error(path, e))?;
    from_dynamic(path, decoded, peak)
}

fn map_decode_error(path: &Path, err: ImageError) -> Error {
    match err {
        ImageError::IoError(source) => Error::Unreadable {
            path: path.to_path_buf(),
            source,
        },
        ImageError::Unsupported(u) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: u.to_string(),
        },
        other => Error::CorruptHeader {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

fn from_dynamic(path: &Path, img: DynamicImage, peak: Option<f64>) -> Result<ImageBuffer> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, samples, format_peak): (usize, Vec<f64>, f64) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(f64::from).collect(), 255.0),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(f64::from).collect(), 255.0),
        DynamicImage::ImageRgba8(b) => (4, b.into_raw().into_iter().map(f64::from).collect(), 255.0),
        DynamicImage::ImageLuma16(b) => {
            (1, b.into_raw().into_iter().map(f64::from).collect(), 65535.0)
        }
        DynamicImage::ImageRgb16(b) => {
            (3, b.into_raw().into_iter().map(f64::from).collect(), 65535.0)
        }
        DynamicImage::ImageRgba16(b) => {
            (4, b.into_raw().into_iter().map(f64::from).collect(), 65535.0)
        }
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: "gray+alpha images are not supported".into(),
            })
        }
        other => {
            return Err(Error::UnsupportedBitDepth {
                path: path.to_path_buf(),
                depth: u32::from(other.color().bits_per_pixel() / other.color().channel_count() as u16),
            })
        }
    };
    let peak = peak.unwrap_or(format_peak);
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak must be positive, got {peak}")));
    }
    ImageBuffer::new(h, w, channels, samples.into_iter().map(|v| v / peak).collect())
}

fn decode_npf(path: &Path, bytes: &[u8]) -> Result<ImageBuffer> {
    let corrupt = |reason: String| Error::CorruptHeader {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 16 {
        return Err(corrupt("NPF1 header truncated".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (word(0), word(1), word(2));
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt(format!("dimensions {h}x{w}x{c} overflow")))?;
    if bytes.len() - 16 != expected {
        return Err(corrupt(format!(
            "{h}x{w}x{c} needs {expected} payload bytes, found {}",
            bytes.len() - 16
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    ImageBuffer::new(h, w, c, data).map_err(|e| corrupt(e.to_string()))
}

pub fn encode_npf(img: &ImageBuffer) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * img.len());
    out.extend_from_slice(NPF1_MAGIC);
    for dim in [img.height(), img.width(), img.channels()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Integer sample for a float value: clamp to `[0, 1]`, scale, round half to even.
pub fn quantize(value: f64, depth: BitDepth) -> u16 {
    (value.clamp(0.0, 1.0) * depth.peak()).round_ties_even() as u16
}

/// Writes `img` with the format chosen by extension: `.png`, `.pgm`/`.ppm`/`.pnm`,
/// or `.npf` (float, `bit_depth` ignored).
pub fn save_image(img: &ImageBuffer, path: &Path, bit_depth: BitDepth) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let unwritable = |source: std::io::Error| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    };
    let format = match ext.as_str() {
        "npf" => return fs::write(path, encode_npf(img)).map_err(unwritable),
        "png" => ImageFormat::Png,
        "pgm" | "ppm" | "pnm" => {
            if img.channels() == 4 {
                return Err(Error::UnsupportedFormat {
                    path: path.to_path_buf(),
                    reason: "PNM cannot hold four channels".into(),
                });
            }
            ImageFormat::Pnm
        }
        _ => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("unknown output extension {ext:?}"),
            })
        }
    };
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match bit_depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v, bit_depth) as u8).collect();
            match img.channels() {
                1 => DynamicImage::ImageLuma8(image::ImageBuffer::from_raw(w, h, raw).unwrap()),
                3 => DynamicImage::ImageRgb8(image::ImageBuffer::from_raw(w, h, raw).unwrap()),
                _ => DynamicImage::ImageRgba8(image::ImageBuffer::from_raw(w, h, raw).unwrap()),
            }
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v, bit_depth)).collect();
            match img.channels() {
                1 => DynamicImage::ImageLuma16(image::ImageBuffer::from_raw(w, h, raw).unwrap()),
                3 => DynamicImage::ImageRgb16(image::ImageBuffer::from_raw(w, h, raw).unwrap()),
                _ => DynamicImage::ImageRgba16(image::ImageBuffer::from_raw(w, h, raw).unwrap()),
            }
        }
    };
    dynamic
        .save_with_format(path, format)
        .map_err(|e| match e {
            ImageError::IoError(source) => unwritable(source),
            other => Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_edges() {
        assert_eq!(quantize(1.2, BitDepth::Eight), 255);
        assert_eq!(quantize(-0.1, BitDepth::Eight), 0);
        assert_eq!(quantize(0.5, BitDepth::Sixteen), 32768);
        // 0.5 * 255 = 127.5 rounds to the even neighbour
        assert_eq!(quantize(0.5, BitDepth::Eight), 128);
        assert_eq!(quantize(0.2, BitDepth::Eight), 51);
    }

    #[test]
    fn bit_depth_parse() {
        assert_eq!(BitDepth::from_bits(16).unwrap(), BitDepth::Sixteen);
        assert!(BitDepth::from_bits(12).is_err());
    }
}
