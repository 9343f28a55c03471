//! A tiny deterministic convolutional network used as a gradient source for the
//! CAM engine without a deep-learning framework.
//!
//! Architecture, for an `N x N` input scaled to `[0, 1]`:
//!
//! ```text
//! conv3x3(1 -> 4, zero padding 1) + ReLU + maxpool 2x2
//! conv3x3(4 -> 8, zero padding 1) + ReLU + maxpool 2x2   -> features 8 x N/4 x N/4
//! head: gap-linear      s = W * GAP(A) + b          (W: M x 8)
//!       flatten-linear  s = W * vec(A) + b          (W: M x 8*D1*D2)
//! ```
//!
//! Because the head is linear in the features, the gradient of each class score
//! with respect to the final activations has a closed form. With the
//! gap-linear head every gradient map is spatially constant, which is exactly
//! the condition under which GradCAM and HiResCAM coincide.
//!
//! Weights come from `Xoshiro256**` seeded through `SplitMix64`
//! (`rand_xoshiro::Xoshiro256StarStar::seed_from_u64`). Each parameter is
//! `(next_u64() >> 11) * 2^-53 - 0.5`, i.e. uniform in `[-0.5, 0.5)`, drawn in
//! the order conv1 weights, conv2 weights, head weights, head bias. Conv biases
//! start at zero.

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::cam::TensorStack;
use crate::error::{Error, Result};
use crate::imagegen::GrayscaleImage;
use crate::tensor_io;

pub const CONV1_CHANNELS: usize = 4;
pub const FEATURE_MAPS: usize = 8;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    GapLinear,
    FlattenLinear,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gap-linear" => Ok(HeadKind::GapLinear),
            "flatten-linear" => Ok(HeadKind::FlattenLinear),
            other => Err(Error::InvalidParameter(format!("unknown head kind {other:?}"))),
        }
    }
}

/// JSON descriptor stored next to the flattened parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefNetDescriptor {
    pub seed: u64,
    pub head_kind: HeadKind,
    pub input_size: usize,
    pub classes: usize,
    /// Name and shape of each parameter block, in storage order.
    pub parameters: Vec<(String, Vec<usize>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefNet {
    seed: u64,
    head_kind: HeadKind,
    input_size: usize,
    classes: usize,
    /// `[out][3][3]`, single input channel.
    conv1: Vec<f64>,
    conv1_bias: Vec<f64>,
    /// `[out][in][3][3]`.
    conv2: Vec<f64>,
    conv2_bias: Vec<f64>,
    /// `[class][input]`, row-major.
    head: Vec<f64>,
    head_bias: Vec<f64>,
}

fn uniform(rng: &mut Xoshiro256StarStar) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) - 0.5
}

impl RefNet {
    pub fn new(seed: u64, head_kind: HeadKind, input_size: usize, classes: usize) -> Result<Self> {
        if input_size < 8 {
            return Err(Error::InvalidParameter(format!("input size must be at least 8, got {input_size}")));
        }
        if classes < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 classes, got {classes}")));
        }
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| uniform(&mut rng)).collect::<Vec<_>>();
        let conv1 = draw(CONV1_CHANNELS * KERNEL * KERNEL);
        let conv2 = draw(FEATURE_MAPS * CONV1_CHANNELS * KERNEL * KERNEL);
        let side = input_size / 4;
        let head_inputs = match head_kind {
            HeadKind::GapLinear => FEATURE_MAPS,
            HeadKind::FlattenLinear => FEATURE_MAPS * side * side,
        };
        let head = draw(classes * head_inputs);
        let head_bias = draw(classes);
        Ok(Self {
            seed,
            head_kind,
            input_size,
            classes,
            conv1,
            conv1_bias: vec![0.0; CONV1_CHANNELS],
            conv2,
            conv2_bias: vec![0.0; FEATURE_MAPS],
            head,
            head_bias,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head_kind
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Side length of the final feature maps.
    pub fn feature_side(&self) -> usize {
        self.input_size / 4
    }

    /// Width of one head weight row.
    pub fn head_inputs(&self) -> usize {
        self.head.len() / self.classes
    }

    /// `(rows, cols)` of the head weight matrix.
    pub fn head_shape(&self) -> (usize, usize) {
        (self.classes, self.head_inputs())
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.head
    }

    pub fn head_bias(&self) -> &[f64] {
        &self.head_bias
    }

    /// Replaces head weights; `weights` must keep the current shape.
    pub fn set_head_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.head.len() {
            return Err(Error::TensorLength {
                expected: self.head.len(),
                found: weights.len(),
            });
        }
        self.head = weights;
        Ok(())
    }

    pub fn set_head_bias(&mut self, bias: Vec<f64>) -> Result<()> {
        if bias.len() != self.classes {
            return Err(Error::TensorLength {
                expected: self.classes,
                found: bias.len(),
            });
        }
        self.head_bias = bias;
        Ok(())
    }

    /// Class scores and last-layer features (post-ReLU, post-pool) for `img`.
    pub fn forward(&self, img: &GrayscaleImage) -> Result<(Vec<f64>, TensorStack)> {
        if img.width() != self.input_size || img.height() != self.input_size {
            return Err(Error::InputSize {
                expected: self.input_size,
                found: img.width(),
                found_h: img.height(),
            });
        }
        let n = self.input_size;
        let input: Vec<f64> = img.pixels().iter().map(|&p| f64::from(p) / 255.0).collect();
        let x = conv3x3_relu(&input, 1, n, n, &self.conv1, &self.conv1_bias);
        let (x, h, w) = maxpool2(&x, CONV1_CHANNELS, n, n);
        let x = conv3x3_relu(&x, CONV1_CHANNELS, h, w, &self.conv2, &self.conv2_bias);
        let (x, h, w) = maxpool2(&x, FEATURE_MAPS, h, w);
        let features = TensorStack::new(FEATURE_MAPS, h, w, x.iter().map(|&v| v as f32).collect())?;
        let scores = self.scores(&features)?;
        Ok((scores, features))
    }

    fn check_features(&self, shape: (usize, usize, usize)) -> Result<()> {
        let side = self.feature_side();
        let expected = (FEATURE_MAPS, side, side);
        if shape != expected {
            return Err(Error::StackShapeMismatch {
                left: expected,
                right: shape,
            });
        }
        Ok(())
    }

    /// Applies the head to a feature stack.
    pub fn scores(&self, features: &TensorStack) -> Result<Vec<f64>> {
        self.check_features(features.shape())?;
        let values: Vec<f64> = features.values().iter().map(|&v| f64::from(v)).collect();
        self.scores_from_values(&values)
    }

    /// Applies the head to flattened `(F, D1, D2)` feature values given in `f64`.
    pub fn scores_from_values(&self, features: &[f64]) -> Result<Vec<f64>> {
        let side = self.feature_side();
        let area = side * side;
        if features.len() != FEATURE_MAPS * area {
            return Err(Error::TensorLength {
                expected: FEATURE_MAPS * area,
                found: features.len(),
            });
        }
        let inputs: Vec<f64> = match self.head_kind {
            HeadKind::GapLinear => features
                .chunks(area)
                .map(|m| m.iter().sum::<f64>() / area as f64)
                .collect(),
            HeadKind::FlattenLinear => features.to_vec(),
        };
        Ok(self
            .head
            .chunks(inputs.len())
            .zip(&self.head_bias)
            .map(|(row, b)| row.iter().zip(&inputs).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// Exact gradient of class score `class` with respect to every feature activation.
    ///
    /// The head is linear, so the gradient does not depend on the activation
    /// values; `features` only fixes the shape.
    pub fn feature_gradients(&self, features: &TensorStack, class: usize) -> Result<TensorStack> {
        if class >= self.classes {
            return Err(Error::ClassOutOfRange {
                index: class,
                classes: self.classes,
            });
        }
        self.check_features(features.shape())?;
        let (maps, rows, cols) = features.shape();
        let area = rows * cols;
        let row = &self.head[class * self.head_inputs()..(class + 1) * self.head_inputs()];
        let values: Vec<f32> = match self.head_kind {
            HeadKind::GapLinear => row
                .iter()
                .flat_map(|&w| std::iter::repeat_n((w / area as f64) as f32, area))
                .collect(),
            HeadKind::FlattenLinear => row.iter().map(|&w| w as f32).collect(),
        };
        TensorStack::new(maps, rows, cols, values)
    }

    pub fn descriptor(&self) -> RefNetDescriptor {
        let (m, k) = self.head_shape();
        RefNetDescriptor {
            seed: self.seed,
            head_kind: self.head_kind,
            input_size: self.input_size,
            classes: self.classes,
            parameters: vec![
                ("conv1.weight".into(), vec![CONV1_CHANNELS, 1, KERNEL, KERNEL]),
                ("conv1.bias".into(), vec![CONV1_CHANNELS]),
                ("conv2.weight".into(), vec![FEATURE_MAPS, CONV1_CHANNELS, KERNEL, KERNEL]),
                ("conv2.bias".into(), vec![FEATURE_MAPS]),
                ("head.weight".into(), vec![m, k]),
                ("head.bias".into(), vec![m]),
            ],
        }
    }

    fn parameter_blocks(&self) -> [&[f64]; 6] {
        [
            &self.conv1,
            &self.conv1_bias,
            &self.conv2,
            &self.conv2_bias,
            &self.head,
            &self.head_bias,
        ]
    }

    /// Writes `refnet.json` and `refnet.npy` (all parameters flattened into a
    /// `(1, 1, P)` float32 tensor in descriptor order) into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let flat: Vec<f32> = self.parameter_blocks().iter().flat_map(|b| b.iter().map(|&v| v as f32)).collect();
        let n = flat.len();
        tensor_io::write_tensor(&TensorStack::new(1, 1, n, flat)?, dir.join("refnet.npy"))?;
        fs::write(dir.join("refnet.json"), serde_json::to_string_pretty(&self.descriptor())?)?;
        Ok(())
    }

    /// Loads a network saved with [`RefNet::save`]. Parameters round-trip
    /// through float32.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let desc_path = dir.join("refnet.json");
        let desc: RefNetDescriptor =
            serde_json::from_str(&fs::read_to_string(&desc_path).map_err(|e| Error::from(e).at(&desc_path))?)
                .map_err(|e| Error::from(e).at(&desc_path))?;
        let mut net = RefNet::new(desc.seed, desc.head_kind, desc.input_size, desc.classes)?;
        if desc != net.descriptor() {
            return Err(Error::InvalidParameter("refnet descriptor does not match its architecture".into()));
        }
        let stack = tensor_io::read_tensor(dir.join("refnet.npy"))?;
        let mut values = stack.values().iter().map(|&v| f64::from(v));
        let sizes: Vec<usize> = net.parameter_blocks().iter().map(|b| b.len()).collect();
        if stack.values().len() != sizes.iter().sum::<usize>() {
            return Err(Error::TensorLength {
                expected: sizes.iter().sum(),
                found: stack.values().len(),
            });
        }
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
        net.conv1 = take(sizes[0]);
        net.conv1_bias = take(sizes[1]);
        net.conv2 = take(sizes[2]);
        net.conv2_bias = take(sizes[3]);
        net.head = take(sizes[4]);
        net.head_bias = take(sizes[5]);
        Ok(net)
    }
}

fn conv3x3_relu(input: &[f64], in_ch: usize, h: usize, w: usize, kernels: &[f64], bias: &[f64]) -> Vec<f64> {
    let out_ch = bias.len();
    let mut out = vec![0.0; out_ch * h * w];
    for o in 0..out_ch {
        for y in 0..h {
            for x in 0..w {
                let mut acc = bias[o];
                for i in 0..in_ch {
                    let k = &kernels[(o * in_ch + i) * 9..(o * in_ch + i + 1) * 9];
                    for ky in 0..KERNEL {
                        let Some(sy) = (y + ky).checked_sub(1).filter(|&sy| sy < h) else {
                            continue;
                        };
                        for kx in 0..KERNEL {
                            let Some(sx) = (x + kx).checked_sub(1).filter(|&sx| sx < w) else {
                                continue;
                            };
                            acc += k[ky * KERNEL + kx] * input[(i * h + sy) * w + sx];
                        }
                    }
                }
                out[(o * h + y) * w + x] = acc.max(0.0);
            }
        }
    }
    out
}

fn maxpool2(input: &[f64], ch: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(ch * oh * ow);
    for c in 0..ch {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let at = |dy: usize, dx: usize| plane[(2 * y + dy) * w + 2 * x + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    (out, oh, ow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_init() {
        let a = RefNet::new(7, HeadKind::GapLinear, 28, 3).unwrap();
        let b = RefNet::new(7, HeadKind::GapLinear, 28, 3).unwrap();
        assert_eq!(a, b);
        let c = RefNet::new(8, HeadKind::GapLinear, 28, 3).unwrap();
        assert_ne!(a.head_weights(), c.head_weights());
    }

    #[test]
    fn pinned_first_draw() {
        // First Xoshiro256** output for seed 0 (SplitMix64 seeding), computed
        // with a standalone implementation of both generators.
        let first: u64 = 0x99ec_5f36_cb75_f2b4;
        assert_eq!(Xoshiro256StarStar::seed_from_u64(0).next_u64(), first);
        let net = RefNet::new(0, HeadKind::GapLinear, 8, 2).unwrap();
        assert_eq!(net.conv1[0], (first >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
    }

    #[test]
    fn weights_in_range() {
        let net = RefNet::new(3, HeadKind::FlattenLinear, 16, 4).unwrap();
        for block in net.parameter_blocks() {
            assert!(block.iter().all(|v| (-0.5..0.5).contains(v)));
        }
    }

    #[test]
    fn head_shapes() {
        let net = RefNet::new(1, HeadKind::GapLinear, 28, 2).unwrap();
        assert_eq!(net.head_shape(), (2, 8));
        let net = RefNet::new(1, HeadKind::FlattenLinear, 28, 2).unwrap();
        assert_eq!(net.head_shape(), (2, 8 * 7 * 7));
    }

    #[test]
    fn init_preconditions() {
        assert!(RefNet::new(1, HeadKind::GapLinear, 7, 2).is_err());
        assert!(RefNet::new(1, HeadKind::GapLinear, 8, 1).is_err());
    }

    #[test]
    fn feature_shape() {
        for n in [8, 28, 30] {
            let net = RefNet::new(5, HeadKind::GapLinear, n, 2).unwrap();
            let img = GrayscaleImage::filled(n, n, 200).unwrap();
            let (scores, feats) = net.forward(&img).unwrap();
            assert_eq!(scores.len(), 2);
            assert_eq!(feats.shape(), (8, n / 4, n / 4));
        }
    }

    #[test]
    fn zero_image_scores_equal_bias() {
        let net = RefNet::new(11, HeadKind::FlattenLinear, 12, 3).unwrap();
        let (scores, feats) = net.forward(&GrayscaleImage::filled(12, 12, 0).unwrap()).unwrap();
        assert!(feats.values().iter().all(|&v| v == 0.0));
        assert_eq!(scores, net.head_bias());
    }

    #[test]
    fn wrong_input_size() {
        let net = RefNet::new(1, HeadKind::GapLinear, 16, 2).unwrap();
        assert!(net.forward(&GrayscaleImage::filled(16, 15, 0).unwrap()).is_err());
    }

    #[test]
    fn gap_scores_by_hand() {
        let net = RefNet::new(21, HeadKind::GapLinear, 8, 2).unwrap();
        let pixels: Vec<u8> = (0..64).map(|i| (i * 37 % 256) as u8).collect();
        let (scores, feats) = net.forward(&GrayscaleImage::new(8, 8, pixels).unwrap()).unwrap();
        assert_eq!(feats.shape(), (8, 2, 2));
        for (m, &score) in scores.iter().enumerate() {
            let mut s = net.head_bias()[m];
            for f in 0..8 {
                let gap = (0..4).map(|i| f64::from(feats.map(f)[i])).sum::<f64>() / 4.0;
                s += net.head_weights()[m * 8 + f] * gap;
            }
            assert!((s - score).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_gradient_closed_form() {
        let mut net = RefNet::new(2, HeadKind::GapLinear, 28, 2).unwrap();
        let mut w = net.head_weights().to_vec();
        w[8..16].fill(0.98);
        w[..8].fill(0.0);
        net.set_head_weights(w).unwrap();
        let feats = TensorStack::zeros(8, 7, 7).unwrap();
        let g1 = net.feature_gradients(&feats, 1).unwrap();
        assert!(g1.values().iter().all(|&g| (g - 0.02).abs() < 1e-7));
        let g0 = net.feature_gradients(&feats, 0).unwrap();
        assert!(g0.values().iter().all(|&g| g == 0.0));
        assert!(net.feature_gradients(&feats, 2).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let net = RefNet::new(99, HeadKind::FlattenLinear, 12, 3).unwrap();
        net.save(dir.path()).unwrap();
        let loaded = RefNet::load(dir.path()).unwrap();
        assert_eq!(loaded.descriptor(), net.descriptor());
        for (a, b) in loaded.head_weights().iter().zip(net.head_weights()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }
}
