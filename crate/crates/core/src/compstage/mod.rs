//! Stage 2: spatial pyramid pooling of part maps and a linear voting head
//! from parts to objects.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netpbm::{self, Gray8};
use crate::partstage::PartMap;
use crate::rng::stream;
use crate::synthgen::write_json;
use crate::tensor::{
    dense, dense_backward, dropout, softmax, softmax_ce, Checkpoint, LayerParams, Mode, Sgd,
    SgdConfig, Tensor,
};
use crate::NUM_CATEGORIES;

pub const DEFAULT_DROPOUT: f32 = 0.1;

/// Pyramid bin counts per side, strictly decreasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SppConfig {
    pub scales: Vec<usize>,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            scales: vec![4, 2, 1],
        }
    }
}

impl SppConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty()
            || self.scales.contains(&0)
            || self.scales.windows(2).any(|w| w[0] <= w[1])
        {
            return Err(Error::InvalidArgument(format!(
                "SPP scales must be strictly decreasing and >= 1, got {:?}",
                self.scales
            )));
        }
        Ok(())
    }

    /// Bins per channel, `sum n^2`.
    pub fn bins(&self) -> usize {
        self.scales.iter().map(|n| n * n).sum()
    }

    /// Length of the pooled vector for `parts` channels.
    pub fn len(&self, parts: usize) -> usize {
        parts * self.bins()
    }

    /// Offset of the block for scale index `s`.
    pub fn block_offset(&self, s: usize, parts: usize) -> usize {
        parts * self.scales[..s].iter().map(|n| n * n).sum::<usize>()
    }
}

/// Divides each channel by its global max when that max exceeds 1.
pub fn normalize_part_maps(map: &PartMap) -> Result<PartMap> {
    let (p, h, w) = map.scores.dims3("normalize_part_maps")?;
    let plane = h * w;
    let mut data = map.scores.data().to_vec();
    for c in 0..p {
        let ch = &mut data[c * plane..(c + 1) * plane];
        let m = ch.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if m > 1.0 {
            ch.iter_mut().for_each(|v| *v /= m);
        }
    }
    Ok(PartMap {
        scores: Tensor::new(vec![p, h, w], data)?,
        stride: map.stride,
    })
}

/// Bin `i` of `n` over a length `len`: `[floor(i len/n), floor((i+1) len/n))`.
pub fn bin_range(i: usize, n: usize, len: usize) -> std::ops::Range<usize> {
    (i * len / n)..((i + 1) * len / n)
}

/// Max-pools each channel over an `n x n` tiling at every scale.
///
/// Layout: scale-major, then channel, then row-major bins.
pub fn spp_pool(scores: &Tensor, config: &SppConfig) -> Result<Tensor> {
    config.validate()?;
    let (p, h, w) = scores.dims3("spp_pool")?;
    let largest = config.scales[0];
    if h < largest || w < largest {
        return Err(Error::shape(
            "spp_pool",
            format!("map {h}x{w} smaller than the largest pyramid scale {largest}"),
        ));
    }
    let d = scores.data();
    let mut out = Vec::with_capacity(config.len(p));
    for &n in &config.scales {
        for c in 0..p {
            let ch = &d[c * h * w..(c + 1) * h * w];
            for by in 0..n {
                for bx in 0..n {
                    let mut m = f32::NEG_INFINITY;
                    for y in bin_range(by, n, h) {
                        for x in bin_range(bx, n, w) {
                            m = m.max(ch[y * w + x]);
                        }
                    }
                    out.push(m);
                }
            }
        }
    }
    Tensor::from_vec(out)
}

/// Dropout followed by a dense layer to the five categories.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Head {
    rate: f32,
    weights: Tensor,
    bias: Tensor,
}

impl Stage2Head {
    pub const TAG: &'static str = "stage2-head";

    /// Zero-initialized head over `input_len` features.
    pub fn zeros(input_len: usize, rate: f32) -> Result<Self> {
        Self::from_parts(
            rate,
            Tensor::zeros(&[NUM_CATEGORIES, input_len]),
            Tensor::zeros(&[NUM_CATEGORIES]),
        )
    }

    pub fn from_parts(rate: f32, weights: Tensor, bias: Tensor) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0,1), got {rate}"
            )));
        }
        if weights.shape().len() != 2
            || weights.shape()[0] != NUM_CATEGORIES
            || bias.shape() != [NUM_CATEGORIES]
        {
            return Err(Error::shape(
                "Stage2Head",
                format!("weights {:?}, bias {:?}", weights.shape(), bias.shape()),
            ));
        }
        Ok(Self {
            rate,
            weights,
            bias,
        })
    }

    pub fn rate(&self) -> f32 {
        self.rate
    }

    pub fn input_len(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    /// Logits; `mode` controls dropout.
    pub fn logits<R: Rng + ?Sized>(
        &self,
        input: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Tensor> {
        self.check(input)?;
        let (x, _) = dropout(input, self.rate, mode, rng)?;
        dense(&x, &self.weights, &self.bias)
    }

    /// Deterministic evaluation-mode logits.
    pub fn eval_logits(&self, input: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        dense(input, &self.weights, &self.bias)
    }

    fn check(&self, input: &Tensor) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::shape(
                "Stage2Head",
                format!(
                    "input has {} entries, head expects {}",
                    input.len(),
                    self.input_len()
                ),
            ));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self, tag: &str) -> Checkpoint {
        let mut t = LayerParams::new();
        t.insert("fc.w", self.weights.clone()).expect("unique");
        t.insert("fc.b", self.bias.clone()).expect("unique");
        Checkpoint::new(t)
            .with_meta("model", tag)
            .with_meta("dropout", self.rate)
    }

    pub fn from_checkpoint(ck: &Checkpoint, tag: &str) -> Result<Self> {
        if ck.meta_value("model")? != tag {
            return Err(Error::InvalidArgument(format!("checkpoint is not a {tag}")));
        }
        let rate = ck
            .meta_value("dropout")?
            .parse()
            .map_err(|_| Error::InvalidArgument("bad dropout rate in checkpoint".into()))?;
        Self::from_parts(
            rate,
            ck.tensors.require("fc.w")?.clone(),
            ck.tensors.require("fc.b")?.clone(),
        )
    }
}

/// `softmax(dense(dropout(spp)))`.
pub fn stage2_forward<R: Rng + ?Sized>(
    spp: &Tensor,
    head: &Stage2Head,
    mode: Mode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(softmax(head.logits(spp, mode, rng)?.data()))
}

/// Evaluation-mode probabilities.
pub fn stage2_predict(spp: &Tensor, head: &Stage2Head) -> Result<Vec<f64>> {
    Ok(softmax(head.eval_logits(spp)?.data()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub sgd: SgdConfig,
    pub dropout: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTrainLog {
    /// Loss of the untrained head over the training set.
    pub initial_loss: f64,
    pub epoch_loss: Vec<f64>,
}

/// Trains a zero-initialized dropout + dense head with softmax
/// cross-entropy on fixed input vectors.
pub fn train_head(
    inputs: &[Tensor],
    labels: &[usize],
    cfg: &HeadTrainConfig,
) -> Result<(Stage2Head, HeadTrainLog)> {
    cfg.sgd.validate()?;
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} inputs for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    let mut head = Stage2Head::zeros(inputs[0].len(), cfg.dropout)?;
    let initial_loss = inputs
        .iter()
        .zip(labels)
        .map(|(x, &y)| Ok(softmax_ce(&head.eval_logits(x)?, y)?.loss))
        .sum::<Result<f64>>()?
        / inputs.len() as f64;
    let mut params = LayerParams::new();
    params.insert("fc.w", head.weights.clone())?;
    params.insert("fc.b", head.bias.clone())?;
    let mut sgd = Sgd::new(cfg.sgd.momentum);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.sgd.epochs);
    for epoch in 0..cfg.sgd.epochs {
        let mut rng = stream(cfg.sgd.seed, "head-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let lr = cfg.sgd.lr_at(epoch);
        let mut total = 0.0;
        for batch in order.chunks(cfg.sgd.batch_size) {
            let mut grads = params.zeros_like();
            for &i in batch {
                let (x, _) = dropout(&inputs[i], head.rate, Mode::Train, &mut rng)?;
                let z = dense(&x, &head.weights, &head.bias)?;
                let ce = softmax_ce(&z, labels[i])?;
                total += ce.loss;
                let g = dense_backward(&x, &head.weights, &ce.grad);
                grads.accumulate("fc.w", &g.weights);
                grads.accumulate("fc.b", &g.bias);
            }
            grads.scale(1.0 / batch.len() as f32);
            sgd.step(&mut params, &grads, lr)?;
            head.weights = params.require("fc.w")?.clone();
            head.bias = params.require("fc.b")?.clone();
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged(format!(
                "head loss {mean} at epoch {epoch}"
            )));
        }
        log::info!("head epoch {epoch}: loss {mean:.4}");
        epoch_loss.push(mean);
    }
    Ok((
        head,
        HeadTrainLog {
            initial_loss,
            epoch_loss,
        },
    ))
}

/// Stage-2 training on SPP vectors of clean part maps.
pub fn train_stage2(
    spp: &[Tensor],
    labels: &[usize],
    cfg: &HeadTrainConfig,
) -> Result<(Stage2Head, HeadTrainLog)> {
    train_head(spp, labels, cfg)
}

/// Normalized part map to SPP vector.
pub fn part_map_spp(map: &PartMap, config: &SppConfig) -> Result<Tensor> {
    spp_pool(&normalize_part_maps(map)?.scores, config)
}

/// Learned spatial weights linking part `part` to category `category`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectPartHeatmap {
    pub category: usize,
    pub part: usize,
    pub side: usize,
    /// Row-major `side x side` weights.
    pub weights: Vec<f32>,
    pub min: f32,
    pub max: f32,
}

impl ObjectPartHeatmap {
    pub fn row_sum(&self, row: usize) -> f64 {
        self.weights[row * self.side..(row + 1) * self.side]
            .iter()
            .map(|&v| v as f64)
            .sum()
    }

    pub fn file_name(&self) -> String {
        format!("cat{}_part{}.pgm", self.category, self.part)
    }
}

/// Reshapes the finest-scale block of the head weights into one heatmap per
/// (category, part).
pub fn heatmaps(
    head: &Stage2Head,
    parts: usize,
    config: &SppConfig,
) -> Result<Vec<ObjectPartHeatmap>> {
    config.validate()?;
    if head.input_len() != config.len(parts) {
        return Err(Error::shape(
            "heatmaps",
            format!(
                "head input {} does not match {} parts x {} bins",
                head.input_len(),
                parts,
                config.bins()
            ),
        ));
    }
    let n = config.scales[0];
    let w = head.weights.data();
    let len = head.input_len();
    let mut out = Vec::with_capacity(NUM_CATEGORIES * parts);
    for c in 0..NUM_CATEGORIES {
        for p in 0..parts {
            let start = c * len + config.block_offset(0, parts) + p * n * n;
            let weights = w[start..start + n * n].to_vec();
            let min = weights.iter().copied().fold(f32::INFINITY, f32::min);
            let max = weights.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            out.push(ObjectPartHeatmap {
                category: c,
                part: p,
                side: n,
                weights,
                min,
                max,
            });
        }
    }
    Ok(out)
}

/// Writes every heatmap as a min-max scaled PGM plus `heatmaps.json`.
pub fn export_heatmaps(
    head: &Stage2Head,
    parts: usize,
    config: &SppConfig,
    out: &Path,
) -> Result<Vec<ObjectPartHeatmap>> {
    let maps = heatmaps(head, parts, config)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for m in &maps {
        let vals: Vec<f64> = m.weights.iter().map(|&v| v as f64).collect();
        let (data, _, _) = netpbm::minmax_to_gray(&vals);
        netpbm::write_pgm(
            &out.join(m.file_name()),
            &Gray8 {
                width: m.side,
                height: m.side,
                data,
            },
        )?;
    }
    write_json(&out.join("heatmaps.json"), &maps)?;
    Ok(maps)
}
