//! Dataset manifests (JSON Lines) and stratified train/val/test splitting.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_VAL_FRACTION: f64 = 0.1;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One line of a manifest. `split` is absent until the dataset has been split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Ordered, id-unique list of samples.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (line, e) in entries.iter().enumerate() {
            if e.id.is_empty() || e.path.is_empty() || e.label.is_empty() {
                return Err(Error::Manifest(format!("entry {} has an empty id, path or label", line + 1)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id {:?}", e.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted distinct class labels.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.entries.iter().map(|e| e.label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == Some(split)).count()
    }

    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))?;
            entries.push(entry);
        }
        Self::new(entries)
    }

    pub fn to_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut writer, e)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::from(e).at(path))?;
        Self::from_jsonl(BufReader::new(file)).map_err(|e| e.at(path))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.to_jsonl(&mut buf)?;
        fs::write(path, buf).map_err(|e| Error::from(e).at(path))
    }
}

/// Result of [`split_manifest`]: the relabelled manifest plus non-fatal notices.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

// Absorbs representation error such as 100 * 0.3 = 30.000000000000004 or 0.29999...
const ROUNDING_SLACK: f64 = 1e-9;

/// Per-class `(train, val, test)` counts for a class of `n` samples.
///
/// Test takes `floor(n * (1 - train_frac))`; of the remaining pool, validation
/// takes `round(pool * val_frac)` (halves round up) and train keeps the rest.
pub fn split_counts(n: usize, train_frac: f64, val_frac: f64) -> (usize, usize, usize) {
    if n < 2 {
        return (n, 0, 0);
    }
    let test = ((n as f64 * (1.0 - train_frac)) + ROUNDING_SLACK).floor() as usize;
    let pool = n - test.min(n);
    let val = ((pool as f64 * val_frac) + 0.5 + ROUNDING_SLACK).floor() as usize;
    let val = val.min(pool);
    (pool - val, val, test.min(n))
}

/// Stratified, seeded split. Within each class (in label order) the samples are
/// shuffled with ChaCha8 seeded by `seed`; the first take test, the next
/// validation, the rest train. Entry order is preserved in the output.
pub fn split_manifest(manifest: &DatasetManifest, train_frac: f64, val_frac: f64, seed: u64) -> Result<SplitOutcome> {
    for (name, v) in [("train fraction", train_frac), ("validation fraction", val_frac)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_class.entry(e.label.as_str()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Train; manifest.entries.len()];
    let mut warnings = Vec::new();
    for (label, mut members) in by_class {
        if members.len() < 2 {
            warnings.push(format!(
                "class {label:?} has {} sample(s); assigned to train",
                members.len()
            ));
            continue;
        }
        let (_, val, test) = split_counts(members.len(), train_frac, val_frac);
        members.shuffle(&mut rng);
        for (rank, &i) in members.iter().enumerate() {
            assignment[i] = if rank < test {
                Split::Test
            } else if rank < test + val {
                Split::Val
            } else {
                Split::Train
            };
        }
    }

    let entries = manifest
        .entries
        .iter()
        .zip(assignment)
        .map(|(e, s)| ManifestEntry {
            split: Some(s),
            ..e.clone()
        })
        .collect();
    Ok(SplitOutcome {
        manifest: DatasetManifest { entries },
        warnings,
    })
}
