use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use malvis_core::manifest::{DEFAULT_SEED, DEFAULT_TRAIN_FRACTION, DEFAULT_VAL_FRACTION};
use malvis_core::DEFAULT_MASK_THRESHOLD;

mod commands;
mod dims;

use dims::Dims;

/// Malware image explainability toolkit.
#[derive(Debug, Parser)]
#[command(name = "malvis", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert binaries into grayscale PNG images (one byte per pixel).
    Convert(ConvertArgs),
    /// Sliding-window Shannon entropy of a binary, as CSV.
    Entropy(EntropyArgs),
    /// Compute GradCAM or HiResCAM heatmaps from feature and gradient tensors.
    Explain(ExplainArgs),
    /// Average per-sample heatmaps into per-class cumulative heatmaps.
    Aggregate(AggregateArgs),
    /// Compare cumulative heatmaps with SSIM.
    Ssim(SsimArgs),
    /// Threshold two heatmaps and OR them into a binary class mask.
    FuseMask(FuseMaskArgs),
    /// Apply class masks to every image of a manifest.
    MaskDataset(MaskDatasetArgs),
    /// Accuracy, macro precision/recall/F1 and confusion matrix from label files.
    Eval(EvalArgs),
    /// Stratified train/val/test split of a manifest.
    Split(SplitArgs),
    /// Export features and gradients from the built-in reference network.
    Refnet(RefnetArgs),
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// Binary file, or directory of binaries (first-level subdirectories name classes).
    input: PathBuf,
    /// Output directory for PNG images.
    #[arg(short, long)]
    output: PathBuf,
    /// Fixed image width; defaults to the file-size table.
    #[arg(long)]
    width: Option<usize>,
    /// Resize every image to WxH after conversion.
    #[arg(long)]
    resize: Option<Dims>,
    /// Write a JSON Lines manifest of the converted images here.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EntropyArgs {
    input: PathBuf,
    #[arg(long, default_value_t = malvis_core::imagegen::DEFAULT_ENTROPY_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = malvis_core::imagegen::DEFAULT_ENTROPY_STRIDE)]
    stride: usize,
    /// Output CSV (standard output when omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Method {
    Gradcam,
    Hirescam,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[arg(long, value_enum, default_value_t = Method::Hirescam)]
    method: Method,
    /// Feature tensor (F, D1, D2).
    #[arg(required_unless_present = "index")]
    features: Option<PathBuf>,
    /// Gradient tensor with the same shape.
    #[arg(required_unless_present = "index")]
    gradients: Option<PathBuf>,
    /// Batch mode: JSON index mapping sample id to feature/gradient files.
    #[arg(long, conflicts_with_all = ["features", "gradients"])]
    index: Option<PathBuf>,
    /// Heatmap tensor (single mode) or output directory (batch mode).
    #[arg(short, long)]
    output: PathBuf,
    /// Also write a PNG rendering, upsampled to WxH when --png-size is given.
    #[arg(long)]
    png: Option<PathBuf>,
    #[arg(long, requires = "png")]
    png_size: Option<Dims>,
}

#[derive(Debug, Args)]
struct AggregateArgs {
    /// Class label for single-class mode.
    #[arg(long = "class", required_unless_present = "manifest")]
    class: Option<String>,
    /// Per-sample heatmap tensors (single-class mode).
    heatmaps: Vec<PathBuf>,
    /// Group mode: manifest giving each sample's class.
    #[arg(long, requires = "heatmap_dir", conflicts_with = "class")]
    manifest: Option<PathBuf>,
    /// Group mode: directory holding `<id>.npy` heatmaps.
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
    /// Output tensor (single-class mode) or directory of `<class>.npy` (group mode).
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["pair", "self_"])))]
struct SsimArgs {
    /// Two directories of `<class>.npy` cumulative heatmaps, one per model.
    #[arg(long, num_args = 2, value_names = ["MODEL_A", "MODEL_B"])]
    pair: Option<Vec<PathBuf>>,
    /// One model directory; mean SSIM over all class pairs.
    #[arg(long = "self", value_name = "MODEL")]
    self_: Option<PathBuf>,
    /// Mean over 11x11 sliding windows instead of one whole-map window.
    #[arg(long)]
    sliding: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FuseMaskArgs {
    /// Heatmap tensor from the first model.
    first: PathBuf,
    /// Heatmap tensor from the second model.
    second: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MASK_THRESHOLD)]
    threshold: f64,
    #[arg(long = "class", default_value = "")]
    class: String,
    /// Model names recorded in the sidecar.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Mask PNG; a JSON sidecar is written next to it.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct MaskDatasetArgs {
    manifest: PathBuf,
    /// Directory of `<class>.png` masks.
    #[arg(long)]
    masks: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// CSV `id,label` of ground truth.
    labels: PathBuf,
    /// CSV `id,label` of predictions.
    predictions: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Write the confusion matrix CSV here.
    #[arg(long)]
    confusion: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SplitArgs {
    manifest: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_frac: f64,
    /// Fraction of the training portion moved to validation.
    #[arg(long, default_value_t = DEFAULT_VAL_FRACTION)]
    val_frac: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Target {
    Predicted,
    TrueLabel,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Head {
    GapLinear,
    FlattenLinear,
}

#[derive(Debug, Args)]
struct RefnetArgs {
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Head::GapLinear)]
    head: Head,
    #[arg(long, default_value_t = 28)]
    input_size: usize,
    /// Class whose score is differentiated.
    #[arg(long, value_enum, default_value_t = Target::Predicted)]
    target: Target,
    /// Output directory for tensors, `index.json` and the network weights.
    #[arg(short, long)]
    output: PathBuf,
}

fn configure_threads() {
    let threads = std::env::var("MALVIS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    configure_threads();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
