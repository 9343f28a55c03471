//! Binary-to-image conversion using the line-by-line layout: byte `i` of the file
//! becomes pixel `i` of a fixed-width grayscale raster, filled row by row.

mod entropy;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::resample;

pub use entropy::{entropy_profile, shannon_entropy, EntropyProfile, DEFAULT_ENTROPY_STRIDE, DEFAULT_ENTROPY_WINDOW};

const KB: usize = 1024;

/// File-size to image-width table. Each entry is `(upper bound in bytes, width)`;
/// files at or above the last bound use 1024.
const WIDTH_TABLE: [(usize, usize); 7] = [
    (10 * KB, 32),
    (30 * KB, 64),
    (60 * KB, 128),
    (100 * KB, 256),
    (200 * KB, 384),
    (500 * KB, 512),
    (1000 * KB, 768),
];

/// An 8-bit grayscale raster stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayscaleImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayscaleImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        let expected = width
            .checked_mul(height)
            .ok_or(Error::InvalidDimensions { width, height })?;
        if pixels.len() != expected {
            return Err(Error::PixelCount {
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// A `width`x`height` image with every pixel set to `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Reads an 8-bit grayscale PNG.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        read_png(path).map_err(|e| e.at(path))
    }

    /// Writes the image as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_png(path, self.width, self.height, png::BitDepth::Eight, &self.pixels).map_err(|e| e.at(path))
    }
}

fn read_png(path: &Path) -> Result<GrayscaleImage> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    // Expand sub-byte depths to 8 bits so 1-bit mask files load too.
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!(
            "expected 8-bit grayscale, found {:?} at {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    buf.truncate(info.buffer_size());
    let pixels = if info.line_size == width {
        buf
    } else {
        buf.chunks(info.line_size).flat_map(|row| &row[..width]).copied().collect()
    };
    GrayscaleImage::new(width, height, pixels)
}

/// Writes a single-channel PNG. `data` holds one sample per byte; for depth `One`
/// the samples must be 0 or 1 and are packed here.
pub(crate) fn write_png(path: &Path, width: usize, height: usize, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let w = u32::try_from(width).map_err(|_| Error::InvalidDimensions { width, height })?;
    let h = u32::try_from(height).map_err(|_| Error::InvalidDimensions { width, height })?;
    let mut encoder = png::Encoder::new(BufWriter::new(File::create(path)?), w, h);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
    let packed;
    let payload = match depth {
        png::BitDepth::One => {
            packed = data
                .chunks(width)
                .flat_map(|row| {
                    row.chunks(8).map(|bits| {
                        bits.iter()
                            .enumerate()
                            .fold(0u8, |acc, (i, &b)| acc | (u8::from(b != 0) << (7 - i)))
                    })
                })
                .collect::<Vec<u8>>();
            &packed[..]
        }
        _ => data,
    };
    writer.write_image_data(payload).map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

/// Image width for a binary of `len` bytes.
pub fn width_for_len(len: usize) -> usize {
    WIDTH_TABLE
        .iter()
        .find(|&&(bound, _)| len < bound)
        .map_or(1024, |&(_, width)| width)
}

/// Lays out `data` row by row at `width` (or the table width), zero-padding the last row.
pub fn bytes_to_image(data: &[u8], width: Option<usize>) -> Result<GrayscaleImage> {
    if data.is_empty() {
        return Err(Error::EmptyBinary);
    }
    let width = width.unwrap_or_else(|| width_for_len(data.len()));
    if width == 0 {
        return Err(Error::InvalidParameter("image width must be positive".into()));
    }
    let height = data.len().div_ceil(width);
    let mut pixels = Vec::with_capacity(width * height);
    pixels.extend_from_slice(data);
    pixels.resize(width * height, 0);
    GrayscaleImage::new(width, height, pixels)
}

/// Bilinear resize with half-pixel centers, rounding to the nearest intensity.
pub fn resize_image(img: &GrayscaleImage, target_w: usize, target_h: usize) -> Result<GrayscaleImage> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidDimensions {
            width: target_w,
            height: target_h,
        });
    }
    let plane: Vec<f64> = img.pixels.iter().map(|&p| f64::from(p)).collect();
    let pixels = resample::bilinear(&plane, img.width, img.height, target_w, target_h)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    GrayscaleImage::new(target_w, target_h, pixels)
}
