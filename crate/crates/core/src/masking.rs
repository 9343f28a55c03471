//! Binary keep/conceal masks derived from two models' cumulative heatmaps, and
//! their application to images and whole datasets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cam::Heatmap;
use crate::error::{Error, Result};
use crate::imagegen::{write_png, GrayscaleImage};
use crate::manifest::{DatasetManifest, Split};
use crate::resample;

/// Heatmap level at or above which a pixel is kept.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.3;

/// Row-major keep (1) / conceal (0) matrix for one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    label: String,
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl ClassMask {
    pub fn new(label: impl Into<String>, width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if bits.len() != width * height {
            return Err(Error::PixelCount {
                expected: width * height,
                found: bits.len(),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidParameter("mask bits must be 0 or 1".into()));
        }
        Ok(Self {
            label: label.into(),
            width,
            height,
            bits,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn kept(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    /// Writes a 1-bit grayscale PNG (white = keep).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_png(path, self.width, self.height, png::BitDepth::One, &self.bits).map_err(|e| e.at(path))
    }

    /// Reads a mask PNG; any nonzero sample counts as keep.
    pub fn load_png(label: impl Into<String>, path: impl AsRef<Path>) -> Result<Self> {
        let img = GrayscaleImage::load_png(path)?;
        let (w, h) = (img.width(), img.height());
        let bits = img.into_pixels().into_iter().map(|p| u8::from(p != 0)).collect();
        Self::new(label, w, h, bits)
    }
}

/// JSON sidecar stored next to a mask PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MaskSidecar {
    pub class: String,
    pub threshold: f64,
    pub source_models: Vec<String>,
}

/// Keeps a pixel when either heatmap reaches `threshold`.
pub fn fuse_masks(label: impl Into<String>, a: &Heatmap, b: &Heatmap, threshold: f64) -> Result<ClassMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside [0, 1]")));
    }
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    let bits = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| u8::from(x >= threshold || y >= threshold))
        .collect();
    ClassMask::new(label, a.cols(), a.rows(), bits)
}

/// Nearest-neighbour upsampling with half-pixel centers.
pub fn upsample_mask(mask: &ClassMask, target_w: usize, target_h: usize) -> Result<ClassMask> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidDimensions {
            width: target_w,
            height: target_h,
        });
    }
    let bits = resample::nearest(&mask.bits, mask.width, mask.height, target_w, target_h);
    ClassMask::new(mask.label.clone(), target_w, target_h, bits)
}

/// Blacks out every pixel whose mask bit is 0.
pub fn apply_mask(img: &GrayscaleImage, mask: &ClassMask) -> Result<GrayscaleImage> {
    if (img.width(), img.height()) != (mask.width, mask.height) {
        return Err(Error::DimensionMismatch {
            left: (img.width(), img.height()),
            right: (mask.width, mask.height),
        });
    }
    let pixels = img
        .pixels()
        .iter()
        .zip(&mask.bits)
        .map(|(&p, &b)| if b == 1 { p } else { 0 })
        .collect();
    GrayscaleImage::new(img.width(), img.height(), pixels)
}

/// Masks every manifest sample with the mask of its labelled class.
///
/// Sample paths are resolved against `input_root` and written to the same
/// relative path under `out_dir`. Masks are upsampled to each image's size when
/// needed. The returned manifest has the same entries, order and splits.
///
/// Test-split samples are masked with their ground-truth class too, which leaks
/// the label into the masked input; a warning is logged when that happens.
pub fn mask_dataset(
    manifest: &DatasetManifest,
    masks: &BTreeMap<String, ClassMask>,
    input_root: &Path,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let mut missing: Vec<String> = manifest
        .entries()
        .iter()
        .map(|e| e.label.clone())
        .filter(|l| !masks.contains_key(l))
        .collect();
    missing.sort();
    missing.dedup();
    if !missing.is_empty() {
        return Err(Error::MissingMask(missing));
    }
    let test_samples = manifest.entries().iter().filter(|e| e.split == Some(Split::Test)).count();
    if test_samples > 0 {
        log::warn!(
            "masking {test_samples} test-split samples with their ground-truth class mask; \
             evaluation on this data leaks the label"
        );
    }

    manifest.entries().par_iter().try_for_each(|entry| -> Result<()> {
        let src = input_root.join(&entry.path);
        let dst: PathBuf = out_dir.join(&entry.path);
        let img = GrayscaleImage::load_png(&src)?;
        let mask = &masks[&entry.label];
        let masked = if (mask.width, mask.height) == (img.width(), img.height()) {
            apply_mask(&img, mask)?
        } else {
            apply_mask(&img, &upsample_mask(mask, img.width(), img.height())?)?
        };
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::from(e).at(parent))?;
        }
        masked.save_png(&dst)
    })?;
    Ok(manifest.clone())
}
