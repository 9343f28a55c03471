//! Per-class cumulative heatmaps and SSIM comparisons between them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::cam::{finalize_heatmap, Heatmap, RawMap};
use crate::error::{Error, Result};

/// Dynamic range of heatmap values.
pub const SSIM_RANGE: f64 = 1.0;
pub const SSIM_C1: f64 = (0.01 * SSIM_RANGE) * (0.01 * SSIM_RANGE);
pub const SSIM_C2: f64 = (0.03 * SSIM_RANGE) * (0.03 * SSIM_RANGE);
pub const SLIDING_WINDOW: usize = 11;

/// The averaged attention of one model over all samples of a class.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeHeatmap {
    pub label: String,
    pub count: usize,
    pub map: Heatmap,
}

/// Element-wise mean of `heatmaps`, re-normalized to the heatmap range.
///
/// Each pixel's values are summed in sorted order, so the result does not
/// depend on the order of the input sequence.
pub fn cumulative_heatmap(label: impl Into<String>, heatmaps: &[Heatmap]) -> Result<CumulativeHeatmap> {
    let first = heatmaps.first().ok_or(Error::EmptyHeatmaps)?;
    let dims = first.dims();
    if let Some(other) = heatmaps.iter().find(|h| h.dims() != dims) {
        return Err(Error::DimensionMismatch {
            left: dims,
            right: other.dims(),
        });
    }
    let n = heatmaps.len() as f64;
    let mut column = Vec::with_capacity(heatmaps.len());
    let mean = (0..first.values().len())
        .map(|i| {
            column.clear();
            column.extend(heatmaps.iter().map(|h| h.values()[i]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect();
    Ok(CumulativeHeatmap {
        label: label.into(),
        count: heatmaps.len(),
        map: finalize_heatmap(&RawMap::new(dims.0, dims.1, mean)?)?,
    })
}

fn ssim_window(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let (mut var_a, mut var_b, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mu_a, y - mu_b);
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    let (var_a, var_b, cov) = (var_a / n, var_b / n, cov / n);
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

fn check_dims(a: &Heatmap, b: &Heatmap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(())
}

/// SSIM with a single window spanning the whole map, population statistics.
pub fn ssim(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    check_dims(a, b)?;
    Ok(ssim_window(a.values(), b.values()))
}

/// Mean SSIM over all `11x11` windows (stride 1). Maps smaller than the window
/// in either dimension are rejected.
pub fn ssim_sliding(a: &Heatmap, b: &Heatmap) -> Result<f64> {
    check_dims(a, b)?;
    let (rows, cols) = a.dims();
    if rows < SLIDING_WINDOW || cols < SLIDING_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "sliding SSIM needs maps of at least {SLIDING_WINDOW}x{SLIDING_WINDOW}, got {rows}x{cols}"
        )));
    }
    let w = SLIDING_WINDOW;
    let mut wa = Vec::with_capacity(w * w);
    let mut wb = Vec::with_capacity(w * w);
    let mut total = 0.0;
    let mut windows = 0usize;
    for y in 0..=rows - w {
        for x in 0..=cols - w {
            wa.clear();
            wb.clear();
            for r in y..y + w {
                wa.extend_from_slice(&a.values()[r * cols + x..r * cols + x + w]);
                wb.extend_from_slice(&b.values()[r * cols + x..r * cols + x + w]);
            }
            total += ssim_window(&wa, &wb);
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    #[default]
    Global,
    Sliding,
}

impl SsimMode {
    pub fn compute(self, a: &Heatmap, b: &Heatmap) -> Result<f64> {
        match self {
            SsimMode::Global => ssim(a, b),
            SsimMode::Sliding => ssim_sliding(a, b),
        }
    }
}

/// Cumulative maps of one model, keyed by class label.
pub type ModelMaps = BTreeMap<String, CumulativeHeatmap>;

/// Per-class SSIM between two models with both the mean and the sum across classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimReport {
    pub per_class: BTreeMap<String, f64>,
    pub mean: f64,
    pub sum: f64,
}

impl SsimReport {
    fn from_values(per_class: BTreeMap<String, f64>) -> Self {
        let sum: f64 = per_class.values().sum();
        let mean = sum / per_class.len() as f64;
        Self { per_class, mean, sum }
    }

    /// `{"classes": {label: value, ...}, "mean": v, "sum": v}` with 6 decimals.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n  \"classes\": {");
        for (i, (label, v)) in self.per_class.iter().enumerate() {
            let sep = if i == 0 { "" } else { "," };
            let key = serde_json::to_string(label).expect("strings serialize");
            let _ = write!(out, "{sep}\n    {key}: {v:.6}");
        }
        if !self.per_class.is_empty() {
            out.push_str("\n  ");
        }
        let _ = write!(out, "}},\n  \"mean\": {:.6},\n  \"sum\": {:.6}\n}}\n", self.mean, self.sum);
        out
    }
}

fn class_set_check(a: &ModelMaps, b: &ModelMaps) -> Result<()> {
    let only_left: Vec<String> = a.keys().filter(|k| !b.contains_key(*k)).cloned().collect();
    let only_right: Vec<String> = b.keys().filter(|k| !a.contains_key(*k)).cloned().collect();
    if only_left.is_empty() && only_right.is_empty() {
        Ok(())
    } else {
        Err(Error::ClassSetMismatch { only_left, only_right })
    }
}

/// Single-class SSIM for every class shared by two models.
pub fn pairwise_cumulative_ssim(model_a: &ModelMaps, model_b: &ModelMaps, mode: SsimMode) -> Result<SsimReport> {
    class_set_check(model_a, model_b)?;
    if model_a.is_empty() {
        return Err(Error::TooFewClasses(0));
    }
    let per_class = model_a
        .par_iter()
        .map(|(label, cum)| Ok((label.clone(), mode.compute(&cum.map, &model_b[label].map)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(SsimReport::from_values(per_class))
}

/// Mean SSIM over all unordered pairs of a model's own class maps.
pub fn model_self_ssim(model: &ModelMaps, mode: SsimMode) -> Result<f64> {
    if model.len() < 2 {
        return Err(Error::TooFewClasses(model.len()));
    }
    let maps: Vec<&Heatmap> = model.values().map(|c| &c.map).collect();
    let pairs: Vec<(usize, usize)> = (0..maps.len())
        .flat_map(|i| (i + 1..maps.len()).map(move |j| (i, j)))
        .collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| mode.compute(maps[i], maps[j]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hm(rows: usize, cols: usize, v: &[f64]) -> Heatmap {
        Heatmap::new(rows, cols, v.to_vec()).unwrap()
    }

    fn model(maps: &[(&str, Heatmap)]) -> ModelMaps {
        maps.iter()
            .map(|(l, m)| {
                (
                    l.to_string(),
                    CumulativeHeatmap {
                        label: l.to_string(),
                        count: 1,
                        map: m.clone(),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn cumulative_single_and_duplicate() {
        let a = hm(2, 2, &[0.0, 0.3, 1.0, 0.6]);
        assert_eq!(cumulative_heatmap("x", std::slice::from_ref(&a)).unwrap().map, a);
        let c = cumulative_heatmap("x", &[a.clone(), a.clone()]).unwrap();
        assert_eq!((c.map, c.count), (a, 2));
    }

    #[test]
    fn cumulative_complementary_maps_degenerate() {
        let a = hm(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = hm(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(cumulative_heatmap("x", &[a, b]).unwrap().map.is_zero());
    }

    #[test]
    fn cumulative_errors() {
        assert!(matches!(cumulative_heatmap("x", &[]), Err(Error::EmptyHeatmaps)));
        let a = Heatmap::zeros(2, 2).unwrap();
        let b = Heatmap::zeros(2, 3).unwrap();
        assert!(cumulative_heatmap("x", &[a, b]).is_err());
    }

    #[test]
    fn ssim_identity_and_extremes() {
        let a = hm(2, 2, &[0.1, 0.9, 0.4, 1.0]);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let zero = Heatmap::zeros(3, 3).unwrap();
        let one = hm(3, 3, &[1.0; 9]);
        let expected = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&zero, &one).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 9.999e-5).abs() < 1e-8);
        assert!(ssim(&zero, &Heatmap::zeros(3, 2).unwrap()).is_err());
    }

    #[test]
    fn sliding_mode() {
        let v: Vec<f64> = (0..144).map(|i| (i % 7) as f64 / 6.0).collect();
        let a = hm(12, 12, &v);
        assert_eq!(ssim_sliding(&a, &a).unwrap(), 1.0);
        assert!(ssim_sliding(&hm(2, 2, &[0.0; 4]), &hm(2, 2, &[0.0; 4])).is_err());
        let b = hm(12, 12, &v.iter().map(|x| 1.0 - x).collect::<Vec<_>>());
        let s = ssim_sliding(&a, &b).unwrap();
        assert!((-1.0..1.0).contains(&s));
    }

    #[test]
    fn pairwise_identity() {
        let m = model(&[
            ("a", hm(2, 2, &[0.0, 1.0, 0.2, 0.3])),
            ("b", hm(2, 2, &[1.0, 0.0, 0.5, 0.5])),
            ("c", hm(2, 2, &[0.0; 4])),
        ]);
        let r = pairwise_cumulative_ssim(&m, &m, SsimMode::Global).unwrap();
        assert!(r.per_class.values().all(|&v| v == 1.0));
        assert_eq!((r.mean, r.sum), (1.0, 3.0));
    }

    #[test]
    fn pairwise_matches_standalone_calls() {
        let a1 = hm(2, 2, &[0.0, 1.0, 0.2, 0.3]);
        let a2 = hm(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let b1 = hm(2, 2, &[0.1, 1.0, 0.0, 0.7]);
        let b2 = hm(2, 2, &[0.9, 0.2, 1.0, 0.0]);
        let ma = model(&[("x", a1.clone()), ("y", a2.clone())]);
        let mb = model(&[("x", b1.clone()), ("y", b2.clone())]);
        let r = pairwise_cumulative_ssim(&ma, &mb, SsimMode::Global).unwrap();
        let sx = ssim(&a1, &b1).unwrap();
        let sy = ssim(&a2, &b2).unwrap();
        assert_eq!(r.per_class["x"], sx);
        assert_eq!(r.per_class["y"], sy);
        assert_eq!(r.sum, sx + sy);
        assert_eq!(r.mean, (sx + sy) / 2.0);
    }

    #[test]
    fn pairwise_class_mismatch() {
        let ma = model(&[("x", Heatmap::zeros(1, 1).unwrap())]);
        let mb = model(&[("y", Heatmap::zeros(1, 1).unwrap())]);
        let err = pairwise_cumulative_ssim(&ma, &mb, SsimMode::Global).unwrap_err();
        assert!(matches!(err, Error::ClassSetMismatch { .. }));
    }

    #[test]
    fn self_ssim() {
        let same = hm(2, 2, &[0.0, 1.0, 0.2, 0.3]);
        let m = model(&[("a", same.clone()), ("b", same.clone()), ("c", same.clone())]);
        assert_eq!(model_self_ssim(&m, SsimMode::Global).unwrap(), 1.0);

        let a = hm(2, 2, &[0.0, 1.0, 0.2, 0.3]);
        let b = hm(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let c = hm(2, 2, &[0.3, 0.3, 1.0, 0.0]);
        let m = model(&[("a", a.clone()), ("b", b.clone()), ("c", c.clone())]);
        let expected = (ssim(&a, &b).unwrap() + ssim(&a, &c).unwrap() + ssim(&b, &c).unwrap()) / 3.0;
        assert!((model_self_ssim(&m, SsimMode::Global).unwrap() - expected).abs() < 1e-15);

        assert!(matches!(
            model_self_ssim(&model(&[("a", a)]), SsimMode::Global),
            Err(Error::TooFewClasses(1))
        ));
    }

    #[test]
    fn report_json() {
        let r = SsimReport::from_values([("b".to_string(), 0.5), ("a\"q".to_string(), 1.0)].into());
        let json = r.to_json();
        assert_eq!(
            json,
            "{\n  \"classes\": {\n    \"a\\\"q\": 1.000000,\n    \"b\": 0.500000\n  },\n  \"mean\": 0.750000,\n  \"sum\": 1.500000\n}\n"
        );
        let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed["sum"], 1.5);
    }

    fn arb_pair() -> impl Strategy<Value = (Heatmap, Heatmap)> {
        (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
            (
                prop::collection::vec(0.0f64..=1.0, r * c),
                prop::collection::vec(0.0f64..=1.0, r * c),
            )
                .prop_map(move |(a, b)| (hm(r, c, &a), hm(r, c, &b)))
        })
    }

    proptest! {
        #[test]
        fn ssim_axioms((a, b) in arb_pair()) {
            prop_assert_eq!(ssim(&a, &a).unwrap(), 1.0);
            let ab = ssim(&a, &b).unwrap();
            prop_assert_eq!(ab, ssim(&b, &a).unwrap());
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn cumulative_is_permutation_invariant(maps in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 6), 1..8),
                                              rot in 0usize..8) {
            let hms: Vec<Heatmap> = maps.iter().map(|v| hm(2, 3, v)).collect();
            let mut shuffled = hms.clone();
            shuffled.rotate_left(rot % hms.len());
            shuffled.reverse();
            prop_assert_eq!(cumulative_heatmap("c", &hms).unwrap(), cumulative_heatmap("c", &shuffled).unwrap());
        }

        #[test]
        fn self_ssim_relabel_invariant(maps in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 4), 2..6)) {
            let hms: Vec<Heatmap> = maps.iter().map(|v| hm(2, 2, v)).collect();
            let names: Vec<String> = (0..hms.len()).map(|i| format!("c{i}")).collect();
            let a = model(&names.iter().map(String::as_str).zip(hms.iter().cloned()).collect::<Vec<_>>());
            let renamed: Vec<String> = (0..hms.len()).map(|i| format!("z{}", hms.len() - i)).collect();
            let b = model(&renamed.iter().map(String::as_str).zip(hms.iter().cloned()).collect::<Vec<_>>());
            let sa = model_self_ssim(&a, SsimMode::Global).unwrap();
            let sb = model_self_ssim(&b, SsimMode::Global).unwrap();
            prop_assert!((sa - sb).abs() < 1e-12);
        }
    }
}
