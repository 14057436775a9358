//! `report.json` plus grayscale renders of every matrix.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    accuracy, build_rdm, compare_confusions, compare_rdms, confusion, CategoricalPrediction,
    ConfusionMatrix, IngestedResponses, Rdm,
};
use crate::error::{Error, Result};
use crate::netpbm::{self, Gray8};
use crate::synthgen::{write_json, Split};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Model names used for the paired Hopfield rows.
const HYBRID: &str = "hybrid";
const HYBRID_BYPASS: &str = "hybrid-no-hopfield";
/// Name under which ingested human responses appear in correlations.
const HUMAN: &str = "human";

/// Everything `emit_report` needs.
#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    /// model name -> split -> predictions
    pub models: BTreeMap<String, BTreeMap<Split, Vec<CategoricalPrediction>>>,
    /// split -> id -> label
    pub labels: BTreeMap<Split, BTreeMap<String, usize>>,
    /// Optional human response distributions for the occluded split.
    pub human: Option<IngestedResponses>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub images: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub confusion_row_normalized: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub splits: BTreeMap<Split, SplitResult>,
}

/// One row of the accuracy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub model: String,
    pub without_occlusion: Option<f64>,
    pub with_occlusion: Option<f64>,
    pub constant_mask: Option<f64>,
}

/// With- and without-Hopfield accuracies on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedHopfield {
    pub split: Split,
    pub with_hopfield: f64,
    pub without_hopfield: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub a: String,
    pub b: String,
    /// `None` when the coefficient is undefined (a constant input).
    pub pearson: Option<f64>,
}

/// A rendered matrix and the scaling needed to recover its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixImage {
    pub file: String,
    pub values_file: Option<String>,
    pub rows: usize,
    pub cols: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub confusion_pearson: String,
    pub rdm_pearson: String,
    pub rdm_order: String,
    pub image_scaling: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub accuracy_table: Vec<AccuracyRow>,
    pub models: BTreeMap<String, ModelResult>,
    pub hopfield_pairs: Vec<PairedHopfield>,
    /// Split -> pairwise Pearson between row-normalized confusion matrices.
    pub confusion_correlations: BTreeMap<Split, Vec<Correlation>>,
    /// Split -> pairwise Pearson between RDM upper triangles.
    pub rdm_correlations: BTreeMap<Split, Vec<Correlation>>,
    pub human_excluded: Vec<String>,
    pub images: Vec<MatrixImage>,
    pub conventions: Conventions,
}

/// Min-max scales `values` (row-major `rows x cols`) to 8-bit gray.
pub fn matrix_image(values: &[f64], rows: usize, cols: usize) -> (Gray8, f64, f64) {
    let (data, min, max) = netpbm::minmax_to_gray(values);
    (
        Gray8 {
            width: cols,
            height: rows,
            data,
        },
        min,
        max,
    )
}

fn write_matrix(
    out: &Path,
    stem: &str,
    values: &[f64],
    rows: usize,
    cols: usize,
    with_json: bool,
) -> Result<MatrixImage> {
    let (img, min, max) = matrix_image(values, rows, cols);
    let file = format!("{stem}.pgm");
    netpbm::write_pgm(&out.join(&file), &img)?;
    let values_file = if with_json {
        let name = format!("{stem}.json");
        let grid: Vec<&[f64]> = values.chunks(cols).collect();
        write_json(&out.join(&name), &grid)?;
        Some(name)
    } else {
        None
    };
    Ok(MatrixImage {
        file,
        values_file,
        rows,
        cols,
        min,
        max,
    })
}

fn pairwise<T>(
    items: &[(String, T)],
    f: impl Fn(&T, &T) -> Result<f64>,
) -> Result<Vec<Correlation>> {
    let mut out = Vec::new();
    for i in 0..items.len() {
        for j in (i + 1)..items.len() {
            let pearson = match f(&items[i].1, &items[j].1) {
                Ok(r) => Some(r),
                Err(Error::Undefined(_)) => None,
                Err(e) => return Err(e),
            };
            out.push(Correlation {
                a: items[i].0.clone(),
                b: items[j].0.clone(),
                pearson,
            });
        }
    }
    Ok(out)
}

/// Computes all metrics, writes `report.json` and the matrix images into
/// `out`, and returns the report.
pub fn emit_report(inputs: &ReportInputs, out: &Path) -> Result<Report> {
    if inputs.models.is_empty() {
        return Err(Error::InvalidArgument(
            "no evaluated models to report".into(),
        ));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut models = BTreeMap::new();
    let mut images = Vec::new();
    let mut confusions: BTreeMap<Split, Vec<(String, ConfusionMatrix)>> = BTreeMap::new();
    let mut rdms: BTreeMap<Split, Vec<(String, Rdm)>> = BTreeMap::new();

    for (name, splits) in &inputs.models {
        let mut results = BTreeMap::new();
        for (&split, preds) in splits {
            let labels = inputs
                .labels
                .get(&split)
                .ok_or_else(|| Error::InvalidArgument(format!("no labels for split {split}")))?;
            let acc = accuracy(preds, labels)?;
            let conf = confusion(preds, labels)?;
            let rn = conf.row_normalized();
            let flat: Vec<f64> = rn.iter().flatten().copied().collect();
            images.push(write_matrix(
                out,
                &format!("confusion_{name}_{split}"),
                &flat,
                5,
                5,
                false,
            )?);
            confusions
                .entry(split)
                .or_default()
                .push((name.clone(), conf.clone()));
            if split == Split::TestOccluded {
                let rdm = build_rdm(preds, labels)?;
                let flat: Vec<f64> = rdm.values.iter().flatten().copied().collect();
                images.push(write_matrix(
                    out,
                    &format!("rdm_{name}_{split}"),
                    &flat,
                    rdm.len(),
                    rdm.len(),
                    true,
                )?);
                rdms.entry(split).or_default().push((name.clone(), rdm));
            }
            results.insert(
                split,
                SplitResult {
                    images: preds.len(),
                    accuracy: acc,
                    confusion: conf,
                    confusion_row_normalized: rn.iter().map(|r| r.to_vec()).collect(),
                },
            );
        }
        models.insert(name.clone(), ModelResult { splits: results });
    }

    let mut human_excluded = Vec::new();
    if let Some(h) = &inputs.human {
        human_excluded = h.excluded.clone();
        if let Some(labels) = inputs.labels.get(&Split::TestOccluded) {
            let mut sub: BTreeMap<String, usize> = BTreeMap::new();
            for p in &h.predictions {
                let y = labels.get(&p.id).ok_or_else(|| Error::MissingIds {
                    ids: vec![p.id.clone()],
                })?;
                sub.insert(p.id.clone(), *y);
            }
            let conf = confusion(&h.predictions, &sub)?;
            confusions
                .entry(Split::TestOccluded)
                .or_default()
                .push((HUMAN.to_string(), conf));
            if h.predictions.len() >= 2 {
                let hr = build_rdm(&h.predictions, &sub)?;
                // compare on the images both sides cover
                let entry = rdms.entry(Split::TestOccluded).or_default();
                let restricted: Vec<(String, Rdm)> = entry
                    .iter()
                    .map(|(n, r)| (n.clone(), restrict(r, &hr.ids)))
                    .collect();
                *entry = restricted;
                entry.push((HUMAN.to_string(), hr));
            }
        }
    }

    let confusion_correlations = confusions
        .iter()
        .map(|(&s, items)| Ok((s, pairwise(items, compare_confusions)?)))
        .collect::<Result<_>>()?;
    let rdm_correlations = rdms
        .iter()
        .map(|(&s, items)| Ok((s, pairwise(items, compare_rdms)?)))
        .collect::<Result<_>>()?;

    let acc_of = |m: &ModelResult, s: Split| m.splits.get(&s).map(|r| r.accuracy);
    let accuracy_table = models
        .iter()
        .map(|(name, m)| AccuracyRow {
            model: name.clone(),
            without_occlusion: acc_of(m, Split::TestClean),
            with_occlusion: acc_of(m, Split::TestOccluded),
            constant_mask: acc_of(m, Split::TestMasked),
        })
        .collect();

    let mut hopfield_pairs = Vec::new();
    if let (Some(with), Some(without)) = (models.get(HYBRID), models.get(HYBRID_BYPASS)) {
        for (&split, r) in &with.splits {
            if let Some(r0) = without.splits.get(&split) {
                hopfield_pairs.push(PairedHopfield {
                    split,
                    with_hopfield: r.accuracy,
                    without_hopfield: r0.accuracy,
                });
            }
        }
    }

    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: inputs.seed,
        config_hash: inputs.config_hash.clone(),
        accuracy_table,
        models,
        hopfield_pairs,
        confusion_correlations,
        rdm_correlations,
        human_excluded,
        images,
        conventions: Conventions {
            confusion_pearson: "all 25 entries of the row-normalized matrices".into(),
            rdm_pearson: "strict upper triangles".into(),
            rdm_order: "category, then image id".into(),
            image_scaling:
                "gray = round(255 * (v - min) / (max - min)); constant matrices render as 0".into(),
        },
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Sub-RDM over `ids` (in their order).
fn restrict(r: &Rdm, ids: &[String]) -> Rdm {
    let pos: BTreeMap<&str, usize> = r
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let idx: Vec<usize> = ids
        .iter()
        .filter_map(|id| pos.get(id.as_str()).copied())
        .collect();
    Rdm {
        ids: idx.iter().map(|&i| r.ids[i].clone()).collect(),
        values: idx
            .iter()
            .map(|&i| idx.iter().map(|&j| r.values[i][j]).collect())
            .collect(),
    }
}
