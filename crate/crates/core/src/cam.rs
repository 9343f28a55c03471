//! GradCAM and HiResCAM attention maps computed from exported feature-map and
//! gradient stacks.
//!
//! Both raw operators consume a feature stack `A` and a gradient stack `dA`
//! (the derivative of one class score with respect to each activation) of shape
//! `F x D1 x D2`:
//!
//! * GradCAM weights each map by the spatial mean of its gradient and sums the
//!   weighted maps.
//! * HiResCAM multiplies gradients and activations element-wise and sums over
//!   maps, with no pooling step.
//!
//! When every gradient map is spatially constant the two coincide exactly.
//! Reductions accumulate in `f64` in a fixed order (maps outer, rows, columns)
//! so results are deterministic.

use crate::error::{Error, Result};
use crate::resample;

/// `F` stacked `D1 x D2` maps of 32-bit values, maps contiguous, each map row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorStack {
    maps: usize,
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl TensorStack {
    pub fn new(maps: usize, rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if maps == 0 || rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "tensor stack dimensions must be positive, got {maps}x{rows}x{cols}"
            )));
        }
        let expected = maps * rows * cols;
        if values.len() != expected {
            return Err(Error::TensorLength {
                expected,
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            maps,
            rows,
            cols,
            values,
        })
    }

    pub fn zeros(maps: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::new(maps, rows, cols, vec![0.0; maps * rows * cols])
    }

    /// `(F, D1, D2)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.maps, self.rows, self.cols)
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// The `f`-th map as a row-major slice.
    pub fn map(&self, f: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.values[f * n..(f + 1) * n]
    }

    pub fn get(&self, f: usize, r: usize, c: usize) -> f32 {
        self.values[(f * self.rows + r) * self.cols + c]
    }
}

/// An unnormalized `rows x cols` attention map.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl RawMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimensions {
                width: cols,
                height: rows,
            });
        }
        if values.len() != rows * cols {
            return Err(Error::TensorLength {
                expected: rows * cols,
                found: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }
}

/// A nonnegative attention map with every value in `[0, 1]`.
///
/// Maps produced by [`finalize_heatmap`] are additionally min-max normalized:
/// unless identically zero, their maximum is exactly 1. Upsampled maps keep the
/// range but may not hit 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidDimensions {
                width: cols,
                height: rows,
            });
        }
        if values.len() != rows * cols {
            return Err(Error::TensorLength {
                expected: rows * cols,
                found: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::HeatmapRange { index, value });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `(rows, cols)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// True when the map is all zeros or its maximum is exactly 1.
    pub fn is_normalized(&self) -> bool {
        self.is_zero() || self.values.iter().copied().fold(f64::MIN, f64::max) == 1.0
    }

    /// As a single-map stack, the interchange layout for heatmap files.
    pub fn to_stack(&self) -> TensorStack {
        let values = self.values.iter().map(|&v| v as f32).collect();
        TensorStack::new(1, self.rows, self.cols, values).expect("heatmap dimensions are positive and values finite")
    }

    /// Reads back a heatmap stored as a single-map stack.
    pub fn from_stack(stack: &TensorStack) -> Result<Self> {
        if stack.maps() != 1 {
            return Err(Error::InvalidParameter(format!(
                "heatmap tensors hold one map, found {}",
                stack.maps()
            )));
        }
        Self::new(
            stack.rows(),
            stack.cols(),
            stack.values().iter().map(|&v| f64::from(v)).collect(),
        )
    }

    /// Scaled to 0..=255 for display.
    pub fn to_image(&self) -> crate::GrayscaleImage {
        let pixels = self.values.iter().map(|&v| (v * 255.0).round() as u8).collect();
        crate::GrayscaleImage::new(self.cols, self.rows, pixels).expect("heatmap dimensions are positive")
    }
}

fn check_shapes(features: &TensorStack, gradients: &TensorStack) -> Result<()> {
    if features.shape() != gradients.shape() {
        return Err(Error::StackShapeMismatch {
            left: features.shape(),
            right: gradients.shape(),
        });
    }
    Ok(())
}

/// Spatial mean of each gradient map: the per-map GradCAM weights.
pub fn gradcam_weights(gradients: &TensorStack) -> Vec<f64> {
    let area = (gradients.rows * gradients.cols) as f64;
    (0..gradients.maps)
        .map(|f| gradients.map(f).iter().map(|&g| f64::from(g)).sum::<f64>() / area)
        .collect()
}

/// `sum_f mean(dA_f) * A_f`, unrectified.
pub fn gradcam_raw(features: &TensorStack, gradients: &TensorStack) -> Result<RawMap> {
    check_shapes(features, gradients)?;
    let weights = gradcam_weights(gradients);
    let mut out = vec![0.0f64; features.rows * features.cols];
    for (f, &alpha) in weights.iter().enumerate() {
        for (acc, &a) in out.iter_mut().zip(features.map(f)) {
            *acc += alpha * f64::from(a);
        }
    }
    RawMap::new(features.rows, features.cols, out)
}

/// `sum_f dA_f (.) A_f`, unrectified.
pub fn hirescam_raw(features: &TensorStack, gradients: &TensorStack) -> Result<RawMap> {
    check_shapes(features, gradients)?;
    let mut out = vec![0.0f64; features.rows * features.cols];
    for f in 0..features.maps {
        for ((acc, &a), &g) in out.iter_mut().zip(features.map(f)).zip(gradients.map(f)) {
            *acc += f64::from(g) * f64::from(a);
        }
    }
    RawMap::new(features.rows, features.cols, out)
}

/// Which raw operator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamMethod {
    GradCam,
    HiResCam,
}

impl CamMethod {
    pub fn raw(self, features: &TensorStack, gradients: &TensorStack) -> Result<RawMap> {
        match self {
            CamMethod::GradCam => gradcam_raw(features, gradients),
            CamMethod::HiResCam => hirescam_raw(features, gradients),
        }
    }

    /// Raw map followed by [`finalize_heatmap`].
    pub fn heatmap(self, features: &TensorStack, gradients: &TensorStack) -> Result<Heatmap> {
        finalize_heatmap(&self.raw(features, gradients)?)
    }
}

impl std::str::FromStr for CamMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcam" => Ok(CamMethod::GradCam),
            "hirescam" => Ok(CamMethod::HiResCam),
            other => Err(Error::InvalidParameter(format!("unknown CAM method {other:?}"))),
        }
    }
}

/// ReLU, then min-max normalization over the map. A map with no range after the
/// ReLU becomes all zeros.
pub fn finalize_heatmap(raw: &RawMap) -> Result<Heatmap> {
    if let Some(i) = raw.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let rectified: Vec<f64> = raw.values.iter().map(|&v| v.max(0.0)).collect();
    let (lo, hi) = rectified
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let values = if hi > lo {
        let range = hi - lo;
        rectified.iter().map(|&v| ((v - lo) / range).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; rectified.len()]
    };
    Heatmap::new(raw.rows, raw.cols, values)
}

/// Bilinear upsampling with half-pixel centers; values stay in `[0, 1]`.
pub fn upsample_heatmap(hm: &Heatmap, target_w: usize, target_h: usize) -> Result<Heatmap> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidDimensions {
            width: target_w,
            height: target_h,
        });
    }
    let values = resample::bilinear(&hm.values, hm.cols, hm.rows, target_w, target_h)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Heatmap::new(target_h, target_w, values)
}
