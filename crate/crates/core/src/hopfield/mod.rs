//! Binary Hopfield memory over binarized penultimate CNN features, and the
//! hybrid classifier built on it.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::baselines::BaselineCnn;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{softmax, Checkpoint, LayerParams, Tensor};
use crate::NUM_CATEGORIES;

/// Default recall budget.
pub const MAX_STEPS: usize = 256;
/// Stored patterns per node: 500 images for 4096 nodes, rounded to 0.12.
pub const STORAGE_RATIO: f64 = 0.12;
/// Loads above this fraction of `N` exceed the classical capacity.
pub const CAPACITY_RATIO: f64 = 0.15;

/// A bipolar state vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryPattern(Vec<i8>);

impl BinaryPattern {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty pattern".into()));
        }
        if let Some(i) = values.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidArgument(format!(
                "pattern entry {i} is not +-1"
            )));
        }
        Ok(Self(values))
    }

    /// From `{0,1}` bits.
    pub fn from_bits(bits: &[bool]) -> Self {
        Self(bits.iter().map(|&b| if b { 1 } else { -1 }).collect())
    }

    pub fn to_bits(&self) -> Vec<bool> {
        self.0.iter().map(|&v| v > 0).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&v| v as f32).collect()
    }

    /// Copy with the listed positions negated.
    pub fn flipped(&self, positions: &[usize]) -> Self {
        let mut v = self.0.clone();
        for &i in positions {
            v[i] = -v[i];
        }
        Self(v)
    }

    pub fn hamming(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// `+1` where `feature > threshold`, else `-1`.
pub fn binarize(features: &[f32], threshold: f32) -> BinaryPattern {
    BinaryPattern(
        features
            .iter()
            .map(|&v| if v > threshold { 1 } else { -1 })
            .collect(),
    )
}

/// Symmetric Hebbian weights with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldMemory {
    n: usize,
    weights: Vec<f32>,
    stored: usize,
}

impl HopfieldMemory {
    pub const TAG: &'static str = "hopfield-memory";

    /// Memory with all-zero weights.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            weights: vec![0.0; n * n],
            stored: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stored(&self) -> usize {
        self.stored
    }

    pub fn weight(&self, i: usize, j: usize) -> f32 {
        self.weights[i * self.n + j]
    }

    fn field(&self, state: &[i8], i: usize) -> f64 {
        self.weights[i * self.n..(i + 1) * self.n]
            .iter()
            .zip(state)
            .map(|(&w, &s)| w as f64 * s as f64)
            .sum()
    }

    /// One synchronous update; `sign(0)` keeps the previous value.
    pub fn update(&self, state: &BinaryPattern) -> BinaryPattern {
        BinaryPattern(
            (0..self.n)
                .map(|i| {
                    let h = self.field(&state.0, i);
                    if h > 0.0 {
                        1
                    } else if h < 0.0 {
                        -1
                    } else {
                        state.0[i]
                    }
                })
                .collect(),
        )
    }

    /// Asynchronous update of node `i`; returns whether it flipped.
    pub fn update_node(&self, state: &mut BinaryPattern, i: usize) -> bool {
        let h = self.field(&state.0, i);
        let next = if h > 0.0 {
            1
        } else if h < 0.0 {
            -1
        } else {
            state.0[i]
        };
        let changed = next != state.0[i];
        state.0[i] = next;
        changed
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut t = LayerParams::new();
        t.insert(
            "weights",
            Tensor::new(vec![self.n, self.n], self.weights.clone()).expect("square"),
        )
        .expect("unique");
        Checkpoint::new(t)
            .with_meta("model", Self::TAG)
            .with_meta("stored", self.stored)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_value("model")? != Self::TAG {
            return Err(Error::InvalidArgument(
                "checkpoint is not a Hopfield memory".into(),
            ));
        }
        let w = ck.tensors.require("weights")?;
        let [n, m] = w.shape()[..] else {
            return Err(Error::shape(
                "HopfieldMemory",
                format!("weights {:?}", w.shape()),
            ));
        };
        if n != m {
            return Err(Error::shape(
                "HopfieldMemory",
                format!("weights {:?} not square", w.shape()),
            ));
        }
        let stored = ck
            .meta_value("stored")?
            .parse()
            .map_err(|_| Error::InvalidArgument("bad stored count".into()))?;
        Ok(Self {
            n,
            weights: w.data().to_vec(),
            stored,
        })
    }
}

/// Common length of a non-empty pattern list.
fn pattern_len(patterns: &[BinaryPattern]) -> Result<usize> {
    let first = patterns
        .first()
        .ok_or_else(|| Error::InvalidArgument("no patterns to store".into()))?;
    let n = first.len();
    if let Some(i) = patterns.iter().position(|p| p.len() != n) {
        return Err(Error::InvalidArgument(format!(
            "pattern {i} has length {}, expected {n}",
            patterns[i].len()
        )));
    }
    Ok(n)
}

/// Hebbian storage `w_ij = (1/N) sum_mu p_i p_j`, zero diagonal.
pub fn store(patterns: &[BinaryPattern]) -> Result<HopfieldMemory> {
    let n = pattern_len(patterns)?;
    if patterns.len() as f64 > CAPACITY_RATIO * n as f64 {
        log::warn!(
            "storing {} patterns in {n} nodes exceeds about {:.0} memories",
            patterns.len(),
            CAPACITY_RATIO * n as f64
        );
    }
    let mut acc = vec![0i32; n * n];
    for p in patterns {
        for i in 0..n {
            let pi = p.0[i] as i32;
            for j in 0..n {
                acc[i * n + j] += pi * p.0[j] as i32;
            }
        }
    }
    let weights = acc
        .iter()
        .enumerate()
        .map(|(idx, &s)| {
            if idx / n == idx % n {
                0.0
            } else {
                (s as f64 / n as f64) as f32
            }
        })
        .collect();
    Ok(HopfieldMemory {
        n,
        weights,
        stored: patterns.len(),
    })
}

/// Ridge added to the pattern Gram matrix so repeated patterns stay solvable.
pub const PROJECTION_RIDGE: f64 = 1.0;

/// Projection storage `W = P^T (P P^T + ridge I)^{-1} P` with zero diagonal,
/// where the rows of `P` are the patterns.
///
/// Stored patterns are fixed points even when they are strongly correlated,
/// as long as the self-coupling removed with the diagonal stays below 1.
pub fn store_projection(patterns: &[BinaryPattern], ridge: f64) -> Result<HopfieldMemory> {
    let n = pattern_len(patterns)?;
    let m = patterns.len();
    if m >= n {
        return Err(Error::InvalidArgument(format!(
            "projection storage needs fewer patterns than nodes, got {m} for {n}"
        )));
    }
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be positive, got {ridge}"
        )));
    }
    let p = DMatrix::from_fn(m, n, |r, c| patterns[r].0[c] as f64);
    let gram = &p * p.transpose() + DMatrix::identity(m, m) * ridge;
    let solved = gram
        .cholesky()
        .ok_or_else(|| {
            Error::InvalidArgument("pattern Gram matrix is not positive definite".into())
        })?
        .solve(&p);
    let w = p.transpose() * solved;
    let weights = (0..n * n)
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            // average the two triangles so rounding keeps W exactly symmetric
            if i == j {
                0.0
            } else {
                (0.5 * (w[(i, j)] + w[(j, i)])) as f32
            }
        })
        .collect();
    Ok(HopfieldMemory {
        n,
        weights,
        stored: m,
    })
}

/// How training patterns are written into the memory weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageRule {
    /// [`store`].
    Hebbian,
    /// [`store_projection`] with [`PROJECTION_RIDGE`].
    #[default]
    Projection,
}

impl StorageRule {
    pub fn store(self, patterns: &[BinaryPattern]) -> Result<HopfieldMemory> {
        match self {
            StorageRule::Hebbian => store(patterns),
            StorageRule::Projection => store_projection(patterns, PROJECTION_RIDGE),
        }
    }
}

/// `E = -1/2 sum_{i != j} w_ij s_i s_j`.
pub fn energy(memory: &HopfieldMemory, state: &BinaryPattern) -> f64 {
    -0.5 * (0..memory.n)
        .map(|i| state.0[i] as f64 * memory.field(&state.0, i))
        .sum::<f64>()
}

/// How synchronous recall stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecallOutcome {
    FixedPoint,
    TwoCycle,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub state: BinaryPattern,
    pub steps: usize,
    pub outcome: RecallOutcome,
}

impl Recall {
    pub fn converged(&self) -> bool {
        self.outcome != RecallOutcome::MaxSteps
    }
}

/// Synchronous recall until a fixed point, a 2-cycle (the lower-energy
/// state of the pair is returned) or `max_steps` updates.
pub fn recall(memory: &HopfieldMemory, probe: &BinaryPattern, max_steps: usize) -> Result<Recall> {
    if probe.len() != memory.n {
        return Err(Error::InvalidArgument(format!(
            "probe length {} does not match {} nodes",
            probe.len(),
            memory.n
        )));
    }
    let mut before: Option<BinaryPattern> = None;
    let mut current = probe.clone();
    for step in 1..=max_steps {
        let next = memory.update(&current);
        if next == current {
            return Ok(Recall {
                state: next,
                steps: step,
                outcome: RecallOutcome::FixedPoint,
            });
        }
        if before.as_ref() == Some(&next) {
            let state = if energy(memory, &next) < energy(memory, &current) {
                next
            } else {
                current
            };
            return Ok(Recall {
                state,
                steps: step,
                outcome: RecallOutcome::TwoCycle,
            });
        }
        before = Some(std::mem::replace(&mut current, next));
    }
    Ok(Recall {
        state: current,
        steps: max_steps,
        outcome: RecallOutcome::MaxSteps,
    })
}

/// One-vs-rest linear classifier trained with hinge loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    weights: Tensor,
    bias: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HingeConfig {
    pub epochs: usize,
    pub lr: f32,
    /// L2 penalty.
    pub lambda: f32,
    pub seed: u64,
}

impl Default for HingeConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.01,
            lambda: 1e-4,
            seed: 0,
        }
    }
}

impl LinearClassifier {
    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    /// Per-category margins `w_c . x + b_c`.
    pub fn margins(&self, x: &[f32]) -> Vec<f32> {
        let n = x.len();
        let w = self.weights.data();
        (0..NUM_CATEGORIES)
            .map(|c| {
                let dot: f64 = w[c * n..(c + 1) * n]
                    .iter()
                    .zip(x)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                (dot + self.bias.data()[c] as f64) as f32
            })
            .collect()
    }

    pub fn train(inputs: &[Vec<f32>], labels: &[usize], cfg: &HingeConfig) -> Result<Self> {
        let n = inputs
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidArgument("no classifier inputs".into()))?;
        if inputs.len() != labels.len() || inputs.iter().any(|x| x.len() != n) {
            return Err(Error::InvalidArgument(
                "inconsistent classifier inputs".into(),
            ));
        }
        if cfg.epochs == 0 || cfg.lr.is_nan() || cfg.lr <= 0.0 {
            return Err(Error::InvalidArgument(
                "hinge epochs and lr must be positive".into(),
            ));
        }
        let mut w = vec![0.0f32; NUM_CATEGORIES * n];
        let mut b = vec![0.0f32; NUM_CATEGORIES];
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut stream(cfg.seed, "hinge-epoch", epoch as u64));
            for &i in &order {
                let x = &inputs[i];
                for c in 0..NUM_CATEGORIES {
                    let y = if labels[i] == c { 1.0f32 } else { -1.0 };
                    let row = &mut w[c * n..(c + 1) * n];
                    let m: f64 = row
                        .iter()
                        .zip(x)
                        .map(|(&a, &v)| a as f64 * v as f64)
                        .sum::<f64>()
                        + b[c] as f64;
                    let shrink = 1.0 - cfg.lr * cfg.lambda;
                    row.iter_mut().for_each(|v| *v *= shrink);
                    if (y as f64) * m < 1.0 {
                        for (v, &xv) in row.iter_mut().zip(x) {
                            *v += cfg.lr * y * xv;
                        }
                        b[c] += cfg.lr * y;
                    }
                }
            }
        }
        Ok(Self {
            weights: Tensor::new(vec![NUM_CATEGORIES, n], w)?,
            bias: Tensor::new(vec![NUM_CATEGORIES], b)?,
        })
    }
}

/// Hopfield memory plus linear classifier over binarized penultimate
/// features of the baseline CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    pub memory: HopfieldMemory,
    pub classifier: LinearClassifier,
    /// Train-scene indices whose patterns were stored.
    pub stored_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub storage_rule: StorageRule,
    pub storage_ratio: f64,
    pub max_steps: usize,
    pub hinge: HingeConfig,
    pub seed: u64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            storage_rule: StorageRule::default(),
            storage_ratio: STORAGE_RATIO,
            max_steps: MAX_STEPS,
            hinge: HingeConfig::default(),
            seed: 0,
        }
    }
}

/// Number of stored patterns for `n` nodes.
pub fn storage_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).floor() as usize
}

/// Class-balanced random subset of `count` indices (round-robin over
/// categories after shuffling each category).
pub fn balanced_subset(labels: &[usize], count: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, "hybrid-subset", 0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CATEGORIES];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for c in &mut by_class {
        c.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(count);
    let mut round = 0;
    while out.len() < count && by_class.iter().any(|c| c.len() > round) {
        for c in &by_class {
            if out.len() < count && round < c.len() {
                out.push(c[round]);
            }
        }
        round += 1;
    }
    out.sort_unstable();
    out
}

/// Builds the hybrid from penultimate features of clean training scenes.
pub fn train_hybrid_from_features(
    features: &[Vec<f32>],
    labels: &[usize],
    cfg: &HybridConfig,
) -> Result<HybridModel> {
    let n = features
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::InvalidArgument("no training features".into()))?;
    let count = storage_count(n, cfg.storage_ratio);
    if count < NUM_CATEGORIES {
        return Err(Error::InvalidArgument(format!(
            "stored subset of {count} is smaller than {NUM_CATEGORIES}"
        )));
    }
    let patterns: Vec<BinaryPattern> = features.iter().map(|f| binarize(f, 0.0)).collect();
    let stored_indices = balanced_subset(labels, count, cfg.seed);
    let subset: Vec<BinaryPattern> = stored_indices
        .iter()
        .map(|&i| patterns[i].clone())
        .collect();
    let memory = cfg.storage_rule.store(&subset)?;
    let inputs: Vec<Vec<f32>> = patterns.iter().map(BinaryPattern::as_f32).collect();
    let classifier = LinearClassifier::train(&inputs, labels, &cfg.hinge)?;
    Ok(HybridModel {
        memory,
        classifier,
        stored_indices,
    })
}

/// Extracts penultimate features and trains the hybrid.
pub fn train_hybrid(
    extractor: &BaselineCnn,
    scenes: &[crate::synthgen::SceneRecord],
    cfg: &HybridConfig,
) -> Result<HybridModel> {
    let feats = scenes
        .iter()
        .map(|s| Ok(extractor.penultimate(&s.image)?.into_data()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = scenes.iter().map(|s| s.category_id).collect();
    train_hybrid_from_features(&feats, &labels, cfg)
}

/// Prediction from penultimate features: binarize, optionally recall,
/// classify, softmax over margins.
pub fn hybrid_predict_features(
    model: &HybridModel,
    features: &[f32],
    use_hopfield: bool,
    max_steps: usize,
) -> Result<(Vec<f64>, Option<Recall>)> {
    let probe = binarize(features, 0.0);
    let (state, rec) = if use_hopfield {
        let r = recall(&model.memory, &probe, max_steps)?;
        (r.state.clone(), Some(r))
    } else {
        (probe, None)
    };
    Ok((softmax(&model.classifier.margins(&state.as_f32())), rec))
}

pub fn hybrid_predict(
    model: &HybridModel,
    extractor: &BaselineCnn,
    image: &Tensor,
    use_hopfield: bool,
    max_steps: usize,
) -> Result<Vec<f64>> {
    let f = extractor.penultimate(image)?;
    Ok(hybrid_predict_features(model, f.data(), use_hopfield, max_steps)?.0)
}

impl HybridModel {
    pub const TAG: &'static str = "hybrid";

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut t = self.memory.to_checkpoint().tensors;
        t.insert("svm.w", self.classifier.weights.clone())
            .expect("unique");
        t.insert("svm.b", self.classifier.bias.clone())
            .expect("unique");
        let idx: Vec<String> = self.stored_indices.iter().map(|i| i.to_string()).collect();
        Checkpoint::new(t)
            .with_meta("model", Self::TAG)
            .with_meta("stored", self.memory.stored)
            .with_meta("stored_indices", idx.join(","))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_value("model")? != Self::TAG {
            return Err(Error::InvalidArgument(
                "checkpoint is not a hybrid model".into(),
            ));
        }
        let mut mem_ck = Checkpoint::new(LayerParams::new())
            .with_meta("model", HopfieldMemory::TAG)
            .with_meta("stored", ck.meta_value("stored")?);
        mem_ck
            .tensors
            .insert("weights", ck.tensors.require("weights")?.clone())?;
        let memory = HopfieldMemory::from_checkpoint(&mem_ck)?;
        let weights = ck.tensors.require("svm.w")?.clone();
        if weights.shape() != [NUM_CATEGORIES, memory.n] {
            return Err(Error::shape(
                "HybridModel",
                format!("classifier {:?}", weights.shape()),
            ));
        }
        let stored_indices = ck
            .meta_value("stored_indices")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::InvalidArgument("bad stored index".into()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            memory,
            classifier: LinearClassifier {
                weights,
                bias: ck.tensors.require("svm.b")?.clone(),
            },
            stored_indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    fn random_patterns(n: usize, m: usize, seed: u64) -> Vec<BinaryPattern> {
        let mut rng = stream(seed, "patterns", 0);
        (0..m)
            .map(|_| {
                BinaryPattern(
                    (0..n)
                        .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn binarize_rule() {
        assert_eq!(binarize(&[0.3, -0.2, 0.0], 0.0).values(), &[1, -1, -1]);
        assert!(binarize(&[1.0, 2.0], 0.0).values().iter().all(|&v| v == 1));
    }

    #[test]
    fn single_pattern_weights_and_energy() {
        let p = random_patterns(16, 1, 1).remove(0);
        let m = store(std::slice::from_ref(&p)).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j {
                    0.0
                } else {
                    (p.0[i] * p.0[j]) as f32 / 16.0
                };
                assert_eq!(m.weight(i, j), expect);
            }
        }
        assert_eq!(m.update(&p), p);
        assert!((energy(&m, &p) + 15.0 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn sign_symmetric_storage() {
        let p = random_patterns(32, 1, 2).remove(0);
        let neg = BinaryPattern(p.0.iter().map(|v| -v).collect());
        assert_eq!(
            store(std::slice::from_ref(&p)).unwrap().weights,
            store(&[neg]).unwrap().weights
        );
    }

    #[test]
    fn single_pattern_projection_weights() {
        // p (p.p + ridge)^-1 p^T = p p^T / (N + ridge)
        let p = random_patterns(16, 1, 8).remove(0);
        let m = store_projection(std::slice::from_ref(&p), 2.0).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                let expect = if i == j {
                    0.0
                } else {
                    (p.0[i] * p.0[j]) as f64 / 18.0
                };
                assert!((m.weight(i, j) as f64 - expect).abs() < 1e-6);
            }
        }
        assert_eq!(m.update(&p), p);
    }

    #[test]
    fn projection_rejects_bad_arguments() {
        let ps = random_patterns(8, 8, 9);
        assert!(store_projection(&ps, 1.0).is_err());
        assert!(store_projection(&ps[..2], 0.0).is_err());
        assert!(store_projection(&[], 1.0).is_err());
        // repeated patterns stay solvable through the ridge
        let twice = vec![ps[0].clone(), ps[0].clone()];
        assert_eq!(
            store_projection(&twice, PROJECTION_RIDGE)
                .unwrap()
                .update(&ps[0]),
            ps[0]
        );
    }

    #[test]
    fn zero_memory_keeps_probe() {
        let m = HopfieldMemory::empty(8);
        let p = random_patterns(8, 1, 3).remove(0);
        let r = recall(&m, &p, MAX_STEPS).unwrap();
        assert_eq!(r.state, p);
        assert_eq!(energy(&m, &p), 0.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut ps = random_patterns(8, 2, 4);
        ps.push(random_patterns(9, 1, 5).remove(0));
        assert!(store(&ps).is_err());
        let m = store(&ps[..2]).unwrap();
        assert!(recall(&m, &ps[2], 10).is_err());
    }

    #[test]
    fn asynchronous_updates_never_raise_energy() {
        let ps = random_patterns(64, 12, 6);
        let m = store(&ps).unwrap();
        let mut s = random_patterns(64, 1, 7).remove(0);
        let mut e = energy(&m, &s);
        for sweep in 0..5 {
            for i in 0..64 {
                m.update_node(&mut s, (i * 7 + sweep) % 64);
                let e2 = energy(&m, &s);
                assert!(e2 <= e + 1e-9);
                e = e2;
            }
        }
    }

    #[test]
    fn storage_arithmetic_and_balance() {
        assert_eq!(storage_count(256, STORAGE_RATIO), 30);
        assert_eq!(storage_count(4096, 500.0 / 4096.0), 500);
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let s = balanced_subset(&labels, 30, 9);
        assert_eq!(s.len(), 30);
        for c in 0..5 {
            assert_eq!(s.iter().filter(|&&i| labels[i] == c).count(), 6);
        }
        assert_eq!(s, balanced_subset(&labels, 30, 9));
        assert_ne!(s, balanced_subset(&labels, 30, 10));
    }

    #[test]
    fn memory_checkpoint_round_trip() {
        let m = store(&random_patterns(16, 3, 8)).unwrap();
        assert_eq!(
            HopfieldMemory::from_checkpoint(&m.to_checkpoint()).unwrap(),
            m
        );
    }

    #[test]
    fn hinge_classifier_separates_prototypes() {
        let protos = random_patterns(64, 5, 11);
        let mut rng = stream(12, "noise", 0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..200 {
            let c = i % 5;
            let flips: Vec<usize> = (0..64).filter(|_| rng.random_bool(0.1)).collect();
            xs.push(protos[c].flipped(&flips).as_f32());
            ys.push(c);
        }
        let clf = LinearClassifier::train(&xs, &ys, &HingeConfig::default()).unwrap();
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, &y)| {
                let m = clf.margins(x);
                (0..5).fold(0, |b, i| if m[i] > m[b] { i } else { b }) == y
            })
            .count();
        assert!(correct >= 195, "{correct}");
    }
}
