//! Subpart dictionary: spherical k-means over mid-level CNN features.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::{softmax, Checkpoint, LayerParams, Tensor};

const MAX_ITERATIONS: usize = 100;
const REL_TOLERANCE: f64 = 1e-4;
/// Minimum number of samples per cluster.
pub const SAMPLES_PER_CLUSTER: usize = 50;
const MODEL_TAG: &str = "subpart-dict";

/// `K` unit-norm cluster centres over `D`-dimensional features.
#[derive(Debug, Clone, PartialEq)]
pub struct SubpartDict {
    centers: Tensor,
    source_layer: String,
    tau: f32,
}

/// Soft subpart responses `[K,h,w]`, summing to one over `K` at each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SubpartMap {
    pub responses: Tensor,
    /// Pixel stride of one cell.
    pub stride: usize,
}

fn norm(v: &[f32]) -> f64 {
    v.iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

impl SubpartDict {
    pub fn new(centers: Tensor, source_layer: impl Into<String>, tau: f32) -> Result<Self> {
        let [k, d] = centers.shape()[..] else {
            return Err(Error::shape(
                "SubpartDict",
                format!("centers must be [K,D], got {:?}", centers.shape()),
            ));
        };
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "need K >= 2 centres, got {k}"
            )));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {tau}"
            )));
        }
        let rows: Vec<&[f32]> = centers.data().chunks(d).collect();
        for (i, r) in rows.iter().enumerate() {
            if (norm(r) - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidArgument(format!(
                    "centre {i} is not unit norm"
                )));
            }
            if rows[..i].iter().any(|q| q == r) {
                return Err(Error::InvalidArgument(format!(
                    "centre {i} duplicates an earlier centre"
                )));
            }
        }
        Ok(Self {
            centers,
            source_layer: source_layer.into(),
            tau,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.centers.shape()[1]
    }

    pub fn tau(&self) -> f32 {
        self.tau
    }

    pub fn source_layer(&self) -> &str {
        &self.source_layer
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    pub fn center(&self, k: usize) -> &[f32] {
        let d = self.dim();
        &self.centers.data()[k * d..(k + 1) * d]
    }

    /// Soft assignment of one feature vector.
    pub fn assign(&self, feature: &[f32]) -> Vec<f64> {
        let n = norm(feature);
        let k = self.k();
        if n == 0.0 {
            return vec![1.0 / k as f64; k];
        }
        let logits: Vec<f32> = (0..k)
            .map(|j| {
                let dot: f64 = feature
                    .iter()
                    .zip(self.center(j))
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum();
                (dot / n / self.tau as f64) as f32
            })
            .collect();
        softmax(&logits)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut t = LayerParams::new();
        t.insert("centers", self.centers.clone()).expect("unique");
        Checkpoint::new(t)
            .with_meta("model", MODEL_TAG)
            .with_meta("source_layer", &self.source_layer)
            .with_meta("tau", self.tau)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_value("model")? != MODEL_TAG {
            return Err(Error::InvalidArgument(
                "checkpoint is not a subpart dictionary".into(),
            ));
        }
        let tau = ck
            .meta_value("tau")?
            .parse()
            .map_err(|_| Error::InvalidArgument("bad tau in checkpoint".into()))?;
        Self::new(
            ck.tensors.require("centers")?.clone(),
            ck.meta_value("source_layer")?,
            tau,
        )
    }
}

/// Diagnostics from one k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansTrace {
    /// Inertia after each assignment step.
    pub inertia: Vec<f64>,
    /// Empty-cluster repairs performed.
    pub repairs: usize,
}

fn nearest(x: &[f32], centers: &[Vec<f32>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(j, c)| (j, sq_dist(x, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

fn plus_plus<R: Rng + ?Sized>(rows: &[&[f32]], k: usize, rng: &mut R) -> Vec<Vec<f32>> {
    let mut centers = vec![rows[rng.random_range(0..rows.len())].to_vec()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = rows.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..rows.len())
        };
        let c = rows[pick].to_vec();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

/// k-means with k-means++ seeding over L2-normalized samples `[n,D]`.
///
/// Centres are re-normalized to unit length at the end. An empty cluster is
/// re-seeded from the sample farthest from its current centre.
pub fn build_subpart_dict(
    samples: &Tensor,
    k: usize,
    tau: f32,
    source_layer: &str,
    seed: u64,
) -> Result<(SubpartDict, KMeansTrace)> {
    let [n, d] = samples.shape()[..] else {
        return Err(Error::shape(
            "build_subpart_dict",
            format!("samples must be [n,D], got {:?}", samples.shape()),
        ));
    };
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got {k}")));
    }
    if n < SAMPLES_PER_CLUSTER * k {
        return Err(Error::InvalidArgument(format!(
            "need at least {} samples for K={k}, got {n}",
            SAMPLES_PER_CLUSTER * k
        )));
    }
    let rows: Vec<&[f32]> = samples.data().chunks(d).collect();
    if let Some(i) = rows.iter().position(|r| (norm(r) - 1.0).abs() > 1e-3) {
        return Err(Error::InvalidArgument(format!(
            "sample {i} is not L2-normalized"
        )));
    }

    let mut rng = stream(seed, "kmeans", 0);
    let mut centers = plus_plus(&rows, k, &mut rng);
    let mut assign = vec![0usize; n];
    let mut trace = KMeansTrace {
        inertia: Vec::new(),
        repairs: 0,
    };
    for _ in 0..MAX_ITERATIONS {
        let mut dists = vec![0.0f64; n];
        for (i, r) in rows.iter().enumerate() {
            let (j, dd) = nearest(r, &centers);
            assign[i] = j;
            dists[i] = dd;
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0f64; d]; k];
        for (r, &j) in rows.iter().zip(&assign) {
            counts[j] += 1;
            for (s, &v) in sums[j].iter_mut().zip(r.iter()) {
                *s += v as f64;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // repair: move the centre onto the worst-served sample
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n > 0");
                centers[j] = rows[far].to_vec();
                dists[far] = 0.0;
                trace.repairs += 1;
            } else {
                centers[j] = sums[j]
                    .iter()
                    .map(|&s| (s / counts[j] as f64) as f32)
                    .collect();
            }
        }
        let inertia: f64 = rows.iter().map(|r| nearest(r, &centers).1).sum();
        let prev = trace.inertia.last().copied();
        trace.inertia.push(inertia);
        if let Some(p) = prev {
            if p <= 0.0 || (p - inertia) / p < REL_TOLERANCE {
                break;
            }
        }
    }

    let mut flat = Vec::with_capacity(k * d);
    for c in &centers {
        let nrm = norm(c);
        if nrm == 0.0 {
            return Err(Error::InvalidArgument(
                "degenerate centre with zero norm".into(),
            ));
        }
        flat.extend(c.iter().map(|&v| (v as f64 / nrm) as f32));
    }
    let dict = SubpartDict::new(Tensor::new(vec![k, d], flat)?, source_layer, tau)?;
    Ok((dict, trace))
}

/// Soft-assigns every cell of a `[D,h,w]` feature map.
pub fn encode_subparts(features: &Tensor, dict: &SubpartDict, stride: usize) -> Result<SubpartMap> {
    let (d, h, w) = features.dims3("encode_subparts")?;
    if d != dict.dim() {
        return Err(Error::shape(
            "encode_subparts",
            format!(
                "feature dimension {d} does not match dictionary dimension {}",
                dict.dim()
            ),
        ));
    }
    let k = dict.k();
    let plane = h * w;
    let f = features.data();
    let mut out = vec![0.0f32; k * plane];
    let mut col = vec![0.0f32; d];
    for i in 0..plane {
        for (c, v) in col.iter_mut().enumerate() {
            *v = f[c * plane + i];
        }
        for (j, p) in dict.assign(&col).into_iter().enumerate() {
            out[j * plane + i] = p as f32;
        }
    }
    Ok(SubpartMap {
        responses: Tensor::new(vec![k, h, w], out)?,
        stride,
    })
}

/// L2-normalizes every nonzero cell of a `[D,h,w]` map into `out` rows.
pub fn normalized_cells(features: &Tensor) -> Result<Vec<Vec<f32>>> {
    let (d, h, w) = features.dims3("normalized_cells")?;
    let plane = h * w;
    let f = features.data();
    Ok((0..plane)
        .filter_map(|i| {
            let v: Vec<f32> = (0..d).map(|c| f[c * plane + i]).collect();
            let n = norm(&v);
            (n > 0.0).then(|| v.iter().map(|&x| (x as f64 / n) as f32).collect())
        })
        .collect())
}
