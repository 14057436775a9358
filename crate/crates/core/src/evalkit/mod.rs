//! Accuracy, confusion matrices, representational dissimilarity matrices,
//! Pearson correlations and report emission.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::NUM_CATEGORIES;

pub use report::{
    emit_report, matrix_image, ModelResult, PairedHopfield, Report, ReportInputs, SplitResult,
    REPORT_SCHEMA_VERSION,
};

/// A 5-way categorical distribution for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalPrediction {
    pub id: String,
    pub probabilities: [f64; NUM_CATEGORIES],
}

impl CategoricalPrediction {
    pub fn new(id: impl Into<String>, probabilities: &[f64]) -> Result<Self> {
        let id = id.into();
        let probs: [f64; NUM_CATEGORIES] = probabilities.try_into().map_err(|_| {
            Error::InvalidArgument(format!(
                "{id}: expected {NUM_CATEGORIES} probabilities, got {}",
                probabilities.len()
            ))
        })?;
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "{id}: probabilities must be nonnegative and sum to 1 (sum {sum})"
            )));
        }
        Ok(Self {
            id,
            probabilities: probs,
        })
    }

    /// Most probable category; ties go to the lowest id.
    pub fn argmax(&self) -> usize {
        (1..NUM_CATEGORIES).fold(0, |best, c| {
            if self.probabilities[c] > self.probabilities[best] {
                c
            } else {
                best
            }
        })
    }
}

fn joined<'a>(
    predictions: &'a [CategoricalPrediction],
    labels: &BTreeMap<String, usize>,
) -> Result<Vec<(&'a CategoricalPrediction, usize)>> {
    let mut seen = BTreeSet::new();
    for p in predictions {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
    }
    let missing: Vec<String> = labels
        .keys()
        .filter(|id| !seen.contains(id.as_str()))
        .cloned()
        .chain(
            predictions
                .iter()
                .filter(|p| !labels.contains_key(&p.id))
                .map(|p| p.id.clone()),
        )
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds { ids: missing });
    }
    predictions
        .iter()
        .map(|p| {
            let y = labels[&p.id];
            if y >= NUM_CATEGORIES {
                return Err(Error::InvalidArgument(format!(
                    "{}: label {y} out of range",
                    p.id
                )));
            }
            Ok((p, y))
        })
        .collect()
}

/// Fraction of argmax-correct predictions. The id sets must match.
pub fn accuracy(
    predictions: &[CategoricalPrediction],
    labels: &BTreeMap<String, usize>,
) -> Result<f64> {
    let pairs = joined(predictions, labels)?;
    if pairs.is_empty() {
        return Err(Error::Undefined("accuracy over zero images".into()));
    }
    let correct = pairs.iter().filter(|(p, y)| p.argmax() == *y).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Counts with rows = ground truth and columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CATEGORIES]; NUM_CATEGORIES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CATEGORIES).map(|i| self.counts[i][i]).sum()
    }

    /// Rows scaled to sum to one; empty rows stay zero.
    pub fn row_normalized(&self) -> [[f64; NUM_CATEGORIES]; NUM_CATEGORIES] {
        let mut out = [[0.0; NUM_CATEGORIES]; NUM_CATEGORIES];
        for (r, row) in self.counts.iter().enumerate() {
            let s: u64 = row.iter().sum();
            if s > 0 {
                for c in 0..NUM_CATEGORIES {
                    out[r][c] = row[c] as f64 / s as f64;
                }
            }
        }
        out
    }
}

pub fn confusion(
    predictions: &[CategoricalPrediction],
    labels: &BTreeMap<String, usize>,
) -> Result<ConfusionMatrix> {
    let mut counts = [[0u64; NUM_CATEGORIES]; NUM_CATEGORIES];
    for (p, y) in joined(predictions, labels)? {
        counts[y][p.argmax()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Sample Pearson correlation. Errors when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined(
            "pearson correlation of a constant vector".into(),
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson over all entries of two row-normalized confusion matrices.
pub fn compare_confusions(a: &ConfusionMatrix, b: &ConfusionMatrix) -> Result<f64> {
    let flat = |m: &ConfusionMatrix| m.row_normalized().into_iter().flatten().collect::<Vec<_>>();
    pearson(&flat(a), &flat(b))
}

/// Euclidean distances between per-image distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rdm {
    /// Image ids in matrix order.
    pub ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl Rdm {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Strict upper triangle, row-major.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .collect()
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// RDM with images ordered by `(category, id)`; the category of each id is
/// looked up in `labels`.
pub fn build_rdm(
    predictions: &[CategoricalPrediction],
    labels: &BTreeMap<String, usize>,
) -> Result<Rdm> {
    if predictions.len() < 2 {
        return Err(Error::InvalidArgument(
            "an RDM needs at least 2 predictions".into(),
        ));
    }
    let mut pairs = joined_subset(predictions, labels)?;
    pairs.sort_by(|(a, ya), (b, yb)| ya.cmp(yb).then_with(|| a.id.cmp(&b.id)));
    let n = pairs.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclid(&pairs[i].0.probabilities, &pairs[j].0.probabilities);
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    Ok(Rdm {
        ids: pairs.iter().map(|(p, _)| p.id.clone()).collect(),
        values,
    })
}

/// Like [`joined`], but only requires every prediction to be labelled.
fn joined_subset<'a>(
    predictions: &'a [CategoricalPrediction],
    labels: &BTreeMap<String, usize>,
) -> Result<Vec<(&'a CategoricalPrediction, usize)>> {
    let mut seen = BTreeSet::new();
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(predictions.len());
    for p in predictions {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
        match labels.get(&p.id) {
            Some(&y) => out.push((p, y)),
            None => missing.push(p.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingIds { ids: missing });
    }
    Ok(out)
}

/// Pearson over the strict upper triangles of two RDMs with identical image
/// order.
pub fn compare_rdms(a: &Rdm, b: &Rdm) -> Result<f64> {
    if a.ids != b.ids {
        return Err(Error::InvalidArgument("RDM image orderings differ".into()));
    }
    pearson(&a.upper_triangle(), &b.upper_triangle())
}

/// Response distributions ingested from a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedResponses {
    pub predictions: Vec<CategoricalPrediction>,
    /// Ids whose counts were all zero.
    pub excluded: Vec<String>,
}

/// Reads `image_id,count_cat0..count_cat4` rows and normalizes the counts.
pub fn ingest_responses(path: &Path) -> Result<IngestedResponses> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let expected: Vec<String> = std::iter::once("image_id".to_string())
        .chain((0..NUM_CATEGORIES).map(|c| format!("count_cat{c}")))
        .collect();
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>()
    {
        return Err(Error::MalformedRows { lines: vec![1] });
    }
    let mut bad = Vec::new();
    let mut predictions = Vec::new();
    let mut excluded = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let Ok(rec) = rec else {
            bad.push(line);
            continue;
        };
        if rec.len() != NUM_CATEGORIES + 1 || rec[0].is_empty() {
            bad.push(line);
            continue;
        }
        let counts: Option<Vec<u64>> = (1..=NUM_CATEGORIES).map(|c| rec[c].parse().ok()).collect();
        let Some(counts) = counts else {
            bad.push(line);
            continue;
        };
        let id = rec[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            excluded.push(id);
            continue;
        }
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        predictions.push(CategoricalPrediction::new(id, &probs)?);
    }
    if !bad.is_empty() {
        return Err(Error::MalformedRows { lines: bad });
    }
    Ok(IngestedResponses {
        predictions,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, p: [f64; 5]) -> CategoricalPrediction {
        CategoricalPrediction::new(id, &p).unwrap()
    }

    fn one_hot(id: &str, c: usize) -> CategoricalPrediction {
        let mut p = [0.0; 5];
        p[c] = 1.0;
        pred(id, p)
    }

    fn labels(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
        pairs.iter().map(|&(i, y)| (i.to_string(), y)).collect()
    }

    #[test]
    fn accuracy_examples() {
        let l = labels(&[("a", 0), ("b", 1), ("c", 2), ("d", 3), ("e", 4)]);
        let all: Vec<_> = ["a", "b", "c", "d", "e"]
            .iter()
            .enumerate()
            .map(|(c, id)| one_hot(id, c))
            .collect();
        assert_eq!(accuracy(&all, &l).unwrap(), 1.0);
        let uniform: Vec<_> = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|id| pred(id, [0.2; 5]))
            .collect();
        assert_eq!(accuracy(&uniform, &l).unwrap(), 0.2);
        let mut three = all.clone();
        three[3] = one_hot("d", 0);
        three[4] = one_hot("e", 0);
        assert_eq!(accuracy(&three, &l).unwrap(), 0.6);
    }

    #[test]
    fn missing_ids_listed() {
        let l = labels(&[("a", 0), ("b", 1)]);
        match accuracy(&[one_hot("a", 0)], &l).unwrap_err() {
            Error::MissingIds { ids } => assert_eq!(ids, vec!["b".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn confusion_examples() {
        let l = labels(&[("x", 2)]);
        let c = confusion(&[one_hot("x", 4)], &l).unwrap();
        assert_eq!(c.counts[2][4], 1);
        assert_eq!(c.total(), 1);
        let rn = c.row_normalized();
        assert_eq!(rn[2].iter().sum::<f64>(), 1.0);
        assert_eq!(rn[0].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 7.0]).unwrap() - 0.9934).abs() < 1e-3);
        assert!(matches!(
            pearson(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn rdm_examples() {
        let l = labels(&[("a", 0), ("b", 1), ("c", 0)]);
        let r = build_rdm(&[one_hot("b", 1), one_hot("a", 0), one_hot("c", 0)], &l).unwrap();
        assert_eq!(r.ids, vec!["a", "c", "b"]);
        assert_eq!(r.values[0][1], 0.0);
        assert!((r.values[0][2] - 2f64.sqrt()).abs() < 1e-15);
        let p = pred("p", [0.5, 0.5, 0.0, 0.0, 0.0]);
        let q = pred("q", [0.0, 0.5, 0.5, 0.0, 0.0]);
        let r = build_rdm(&[p, q], &labels(&[("p", 0), ("q", 0)])).unwrap();
        assert!((r.values[0][1] - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(
            build_rdm(&[one_hot("a", 0), one_hot("a", 1)], &l),
            Err(Error::DuplicateId(_))
        ));
    }

    #[test]
    fn prediction_validation_and_ties() {
        assert!(CategoricalPrediction::new("x", &[0.5, 0.5]).is_err());
        assert!(CategoricalPrediction::new("x", &[0.5, 0.6, 0.0, 0.0, 0.0]).is_err());
        assert_eq!(pred("x", [0.0, 0.4, 0.4, 0.2, 0.0]).argmax(), 1);
    }
}
