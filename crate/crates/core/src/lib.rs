//! Explainability toolkit for image-based malware classifiers.
//!
//! The pipeline turns binaries into grayscale images ([`imagegen`]), computes
//! GradCAM and HiResCAM heatmaps from exported feature and gradient tensors
//! ([`cam`], with [`refnet`] as a built-in tensor source), aggregates them per
//! class and compares models with SSIM ([`aggregate`]), derives keep/conceal
//! masks and masked datasets ([`masking`]), and scores classifiers
//! ([`metrics`]). Tensors travel as NPY files ([`tensor_io`]) and datasets as
//! JSON Lines manifests ([`manifest`]).

pub mod aggregate;
pub mod cam;
mod error;
pub mod imagegen;
pub mod manifest;
pub mod masking;
pub mod metrics;
pub mod refnet;
mod resample;
pub mod tensor_io;

pub use aggregate::{
    cumulative_heatmap, model_self_ssim, pairwise_cumulative_ssim, ssim, CumulativeHeatmap, ModelMaps, SsimMode,
    SsimReport,
};
pub use cam::{finalize_heatmap, gradcam_raw, hirescam_raw, upsample_heatmap, CamMethod, Heatmap, RawMap, TensorStack};
pub use error::{Error, Result};
pub use imagegen::{bytes_to_image, entropy_profile, resize_image, EntropyProfile, GrayscaleImage};
pub use manifest::{split_manifest, DatasetManifest, ManifestEntry, Split};
pub use masking::{apply_mask, fuse_masks, mask_dataset, upsample_mask, ClassMask, DEFAULT_MASK_THRESHOLD};
pub use metrics::{classification_metrics, confusion_matrix, ClassificationMetrics, ConfusionMatrix};
pub use refnet::{HeadKind, RefNet};
pub use tensor_io::{read_tensor, write_tensor};
