use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use malvis_core::aggregate::{self, CumulativeHeatmap, ModelMaps, SsimMode};
use malvis_core::cam::{upsample_heatmap, CamMethod, Heatmap};
use malvis_core::imagegen::{bytes_to_image, entropy_profile, resize_image, GrayscaleImage};
use malvis_core::manifest::{split_manifest, DatasetManifest, ManifestEntry, Split};
use malvis_core::masking::{self, ClassMask, MaskSidecar};
use malvis_core::metrics::{classification_metrics, confusion_matrix};
use malvis_core::refnet::{HeadKind, RefNet};
use malvis_core::{read_tensor, write_tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{
    AggregateArgs, Command, ConvertArgs, EntropyArgs, EvalArgs, ExplainArgs, FuseMaskArgs, Head, MaskDatasetArgs,
    Method, RefnetArgs, SplitArgs, SsimArgs, Target,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Convert(args) => convert(args),
        Command::Entropy(args) => entropy(args),
        Command::Explain(args) => explain(args),
        Command::Aggregate(args) => aggregate(args),
        Command::Ssim(args) => ssim(args),
        Command::FuseMask(args) => fuse_mask(args),
        Command::MaskDataset(args) => mask_dataset(args),
        Command::Eval(args) => eval(args),
        Command::Split(args) => split(args),
        Command::Refnet(args) => refnet(args),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(path) => {
            create_parent(path)?;
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Directory against which a manifest's relative paths resolve.
fn manifest_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn relative_string(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

fn convert(args: ConvertArgs) -> Result<()> {
    let meta = fs::metadata(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let files: Vec<PathBuf> = if meta.is_dir() {
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(&args.input).sort_by_file_name() {
            let entry = entry?;
            if entry.file_type().is_file() {
                files.push(entry.path().strip_prefix(&args.input)?.to_path_buf());
            }
        }
        files
    } else {
        vec![PathBuf::from(args.input.file_name().context("input has no file name")?)]
    };
    let base = if meta.is_dir() {
        args.input.clone()
    } else {
        manifest_root(&args.input)
    };

    fs::create_dir_all(&args.output)?;
    let outputs: Vec<PathBuf> = files
        .par_iter()
        .map(|rel| -> Result<PathBuf> {
            let src = base.join(rel);
            let data = fs::read(&src).with_context(|| format!("reading {}", src.display()))?;
            let mut img = bytes_to_image(&data, args.width).with_context(|| src.display().to_string())?;
            if let Some(d) = args.resize {
                img = resize_image(&img, d.width, d.height)?;
            }
            let mut name = rel.as_os_str().to_owned();
            name.push(".png");
            let out_rel = PathBuf::from(name);
            let dst = args.output.join(&out_rel);
            create_parent(&dst)?;
            img.save_png(&dst)?;
            Ok(out_rel)
        })
        .collect::<Result<_>>()?;
    println!("converted {} file(s) into {}", outputs.len(), args.output.display());

    if meta.is_dir() {
        let mut entries = Vec::with_capacity(files.len());
        for (rel, out_rel) in files.iter().zip(&outputs) {
            let mut parts = rel.components();
            let label = match (parts.next(), parts.next()) {
                (Some(class), Some(_)) => class.as_os_str().to_string_lossy().into_owned(),
                _ => bail!(
                    "{} is not inside a class directory; cannot label it in the manifest",
                    rel.display()
                ),
            };
            entries.push(ManifestEntry {
                id: relative_string(rel),
                path: relative_string(out_rel),
                label,
                split: None,
            });
        }
        let path = args.manifest.unwrap_or_else(|| args.output.join("manifest.jsonl"));
        ensure!(
            manifest_root(&path) == args.output,
            "the manifest must be written inside the output directory"
        );
        DatasetManifest::new(entries)?.save(&path)?;
        println!("manifest: {}", path.display());
    } else if args.manifest.is_some() {
        bail!("--manifest requires a directory input");
    }
    Ok(())
}

fn entropy(args: EntropyArgs) -> Result<()> {
    let data = fs::read(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let profile = entropy_profile(&data, args.window, args.stride)?;
    write_output(args.output.as_deref(), &profile.to_csv())
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    features: String,
    gradients: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    predicted: Option<usize>,
}

fn cam_method(method: Method) -> CamMethod {
    match method {
        Method::Gradcam => CamMethod::GradCam,
        Method::Hirescam => CamMethod::HiResCam,
    }
}

fn explain_pair(method: CamMethod, features: &Path, gradients: &Path) -> Result<Heatmap> {
    let a = read_tensor(features)?;
    let g = read_tensor(gradients)?;
    Ok(method.heatmap(&a, &g)?)
}

fn explain(args: ExplainArgs) -> Result<()> {
    let method = cam_method(args.method);
    let Some(index_path) = args.index else {
        let (features, gradients) = (args.features.unwrap(), args.gradients.unwrap());
        let hm = explain_pair(method, &features, &gradients)?;
        create_parent(&args.output)?;
        write_tensor(&hm.to_stack(), &args.output)?;
        if let Some(png) = &args.png {
            let shown = match args.png_size {
                Some(d) => upsample_heatmap(&hm, d.width, d.height)?,
                None => hm.clone(),
            };
            create_parent(png)?;
            shown.to_image().save_png(png)?;
        }
        println!("heatmap {}x{} -> {}", hm.rows(), hm.cols(), args.output.display());
        return Ok(());
    };

    let text = fs::read_to_string(&index_path).with_context(|| format!("reading {}", index_path.display()))?;
    let index: BTreeMap<String, IndexEntry> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", index_path.display()))?;
    let root = manifest_root(&index_path);
    index
        .par_iter()
        .try_for_each(|(id, entry)| -> Result<()> {
            let hm = explain_pair(method, &root.join(&entry.features), &root.join(&entry.gradients))
                .with_context(|| format!("sample {id}"))?;
            let dst = args.output.join(format!("{id}.npy"));
            create_parent(&dst)?;
            write_tensor(&hm.to_stack(), &dst)?;
            Ok(())
        })?;
    println!("wrote {} heatmap(s) into {}", index.len(), args.output.display());
    Ok(())
}

fn read_heatmap(path: &Path) -> Result<Heatmap> {
    let stack = read_tensor(path)?;
    Heatmap::from_stack(&stack).with_context(|| path.display().to_string())
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    if let Some(label) = args.class {
        ensure!(!args.heatmaps.is_empty(), "no heatmaps given");
        let maps = args.heatmaps.iter().map(|p| read_heatmap(p)).collect::<Result<Vec<_>>>()?;
        let cum = aggregate::cumulative_heatmap(label, &maps)?;
        create_parent(&args.output)?;
        write_tensor(&cum.map.to_stack(), &args.output)?;
        println!("class {}: {} heatmap(s) -> {}", cum.label, cum.count, args.output.display());
        return Ok(());
    }

    let manifest = DatasetManifest::load(args.manifest.as_ref().unwrap())?;
    let dir = args.heatmap_dir.unwrap();
    let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in manifest.entries() {
        groups.entry(e.label.as_str()).or_default().push(e.id.as_str());
    }
    fs::create_dir_all(&args.output)?;
    let counts = groups
        .par_iter()
        .map(|(label, ids)| -> Result<(String, usize)> {
            let maps = ids
                .iter()
                .map(|id| read_heatmap(&dir.join(format!("{id}.npy"))))
                .collect::<Result<Vec<_>>>()?;
            let cum = aggregate::cumulative_heatmap(*label, &maps)?;
            write_tensor(&cum.map.to_stack(), args.output.join(format!("{label}.npy")))?;
            Ok((cum.label, cum.count))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    fs::write(args.output.join("counts.json"), serde_json::to_string_pretty(&counts)?)?;
    for (label, n) in &counts {
        println!("class {label}: {n} heatmap(s)");
    }
    Ok(())
}

/// Loads every `<class>.npy` in `dir` as one model's cumulative heatmaps.
fn load_model(dir: &Path) -> Result<ModelMaps> {
    let counts: BTreeMap<String, usize> = match fs::read_to_string(dir.join("counts.json")) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => BTreeMap::new(),
    };
    let mut model = ModelMaps::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "npy") {
            let label = path.file_stem().unwrap().to_string_lossy().into_owned();
            let map = read_heatmap(&path)?;
            let count = counts.get(&label).copied().unwrap_or(1);
            model.insert(label.clone(), CumulativeHeatmap { label, count, map });
        }
    }
    ensure!(!model.is_empty(), "no cumulative heatmaps in {}", dir.display());
    Ok(model)
}

fn ssim(args: SsimArgs) -> Result<()> {
    let mode = if args.sliding { SsimMode::Sliding } else { SsimMode::Global };
    let text = if let Some(pair) = args.pair {
        let a = load_model(&pair[0])?;
        let b = load_model(&pair[1])?;
        aggregate::pairwise_cumulative_ssim(&a, &b, mode)?.to_json()
    } else {
        let model = load_model(args.self_.as_ref().unwrap())?;
        let n = model.len();
        let mean = aggregate::model_self_ssim(&model, mode)?;
        format!(
            "{{\n  \"mean\": {mean:.6},\n  \"classes\": {n},\n  \"pairs\": {}\n}}\n",
            n * (n - 1) / 2
        )
    };
    write_output(args.output.as_deref(), &text)
}

fn fuse_mask(args: FuseMaskArgs) -> Result<()> {
    let a = read_heatmap(&args.first)?;
    let b = read_heatmap(&args.second)?;
    let label = if args.class.is_empty() {
        args.output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        args.class
    };
    let mask = masking::fuse_masks(label, &a, &b, args.threshold)?;
    create_parent(&args.output)?;
    mask.save_png(&args.output)?;
    let sidecar = MaskSidecar {
        class: mask.label().to_string(),
        threshold: args.threshold,
        source_models: args.models,
    };
    fs::write(args.output.with_extension("json"), serde_json::to_string_pretty(&sidecar)?)?;
    println!(
        "mask {}: kept {}/{} pixels at threshold {}",
        mask.label(),
        mask.kept(),
        mask.bits().len(),
        args.threshold
    );
    Ok(())
}

fn mask_dataset(args: MaskDatasetArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let mut masks = BTreeMap::new();
    for label in manifest.labels() {
        let path = args.masks.join(format!("{label}.png"));
        if path.exists() {
            masks.insert(label.clone(), ClassMask::load_png(label, &path)?);
        }
    }
    fs::create_dir_all(&args.output)?;
    let out = masking::mask_dataset(&manifest, &masks, &manifest_root(&args.manifest), &args.output)?;
    let path = args.output.join("manifest.jsonl");
    out.save(&path)?;
    println!("masked {} sample(s); manifest: {}", out.len(), path.display());
    Ok(())
}

fn read_label_csv(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    ensure!(
        headers.len() == 2 && &headers[0] == "id" && &headers[1] == "label",
        "{}: expected header `id,label`",
        path.display()
    );
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.with_context(|| path.display().to_string())?;
        rows.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(rows)
}

fn eval(args: EvalArgs) -> Result<()> {
    let truth = read_label_csv(&args.labels)?;
    let preds: BTreeMap<String, String> = read_label_csv(&args.predictions)?.into_iter().collect();
    let mut classes: Vec<String> = truth.iter().map(|r| r.1.clone()).chain(preds.values().cloned()).collect();
    classes.sort();
    classes.dedup();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut labels = Vec::with_capacity(truth.len());
    let mut predicted = Vec::with_capacity(truth.len());
    for (id, label) in &truth {
        let p = preds.get(id).with_context(|| format!("no prediction for sample {id:?}"))?;
        labels.push(index[label.as_str()]);
        predicted.push(index[p.as_str()]);
    }
    let cm = confusion_matrix(&labels, &predicted, classes.len())?;
    let metrics = classification_metrics(&cm)?;
    if let Some(path) = &args.confusion {
        write_output(Some(path), &cm.to_csv(&classes)?)?;
    }
    write_output(args.output.as_deref(), &metrics.to_json())
}

fn split(args: SplitArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let outcome = split_manifest(&manifest, args.train_frac, args.val_frac, args.seed)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    create_parent(&args.output)?;
    outcome.manifest.save(&args.output)?;
    let m = &outcome.manifest;
    println!(
        "seed {}: train {} / val {} / test {} -> {}",
        args.seed,
        m.count(Split::Train),
        m.count(Split::Val),
        m.count(Split::Test),
        args.output.display()
    );
    Ok(())
}

fn refnet(args: RefnetArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let labels = manifest.labels();
    let head = match args.head {
        Head::GapLinear => HeadKind::GapLinear,
        Head::FlattenLinear => HeadKind::FlattenLinear,
    };
    let net = RefNet::new(args.seed, head, args.input_size, labels.len().max(2))?;
    let root = manifest_root(&args.manifest);
    fs::create_dir_all(&args.output)?;
    net.save(&args.output)?;

    let index = manifest
        .entries()
        .par_iter()
        .map(|e| -> Result<(String, IndexEntry)> {
            let src = root.join(&e.path);
            let mut img = GrayscaleImage::load_png(&src)?;
            if (img.width(), img.height()) != (net.input_size(), net.input_size()) {
                img = resize_image(&img, net.input_size(), net.input_size())?;
            }
            let (scores, features) = net.forward(&img)?;
            let predicted = scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let class = match args.target {
                Target::Predicted => predicted,
                Target::TrueLabel => labels.binary_search(&e.label).unwrap(),
            };
            let gradients = net.feature_gradients(&features, class)?;
            let entry = IndexEntry {
                features: format!("{}.features.npy", e.id),
                gradients: format!("{}.gradients.npy", e.id),
                class: Some(class),
                predicted: Some(predicted),
            };
            let feat_path = args.output.join(&entry.features);
            create_parent(&feat_path)?;
            write_tensor(&features, &feat_path)?;
            write_tensor(&gradients, args.output.join(&entry.gradients))?;
            Ok((e.id.clone(), entry))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    fs::write(args.output.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    let mut csv = csv::Writer::from_path(args.output.join("predictions.csv"))?;
    csv.write_record(["id", "label"])?;
    for e in manifest.entries() {
        let p = index[&e.id].predicted.unwrap_or(0);
        csv.write_record([e.id.as_str(), labels.get(p).map_or("", String::as_str)])?;
    }
    csv.flush()?;
    println!(
        "seed {}: exported {} sample(s) ({} classes, features {}x{}x{}) into {}",
        args.seed,
        index.len(),
        net.classes(),
        malvis_core::refnet::FEATURE_MAPS,
        net.feature_side(),
        net.feature_side(),
        args.output.display()
    );
    Ok(())
}
