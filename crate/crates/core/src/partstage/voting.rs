//! Spatial voting from subpart responses to part maps.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dict::{encode_subparts, SubpartDict, SubpartMap};
use crate::baselines::{BaselineCnn, TAP_STRIDE};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::synthgen::{Mask, PartAnnotation, NUM_PART_TYPES};
use crate::tensor::{
    conv2d, conv2d_backward, sigmoid, Checkpoint, LayerParams, Sgd, SgdConfig, Tensor,
};

/// Spatial extent of the voting kernel.
pub const VOTING_SIZE: usize = 15;
/// Radius (cells) of the positive disk around each visible part centre.
pub const TARGET_RADIUS: i64 = 2;
/// Parts less visible than this contribute no positives.
pub const VISIBILITY_THRESHOLD: f32 = 0.5;

/// Per-part confidence scores `[P,h,w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartMap {
    pub scores: Tensor,
    pub stride: usize,
}

/// A `[P,K,s,s]` convolution with "same" padding from subpart responses to
/// part logits. Shared by the voting layer and the context-free ablation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDetector {
    kernel: Tensor,
    bias: Tensor,
}

impl SpatialDetector {
    /// Zero-initialized detector.
    pub fn zeros(parts: usize, subparts: usize, size: usize) -> Result<Self> {
        if size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd, got {size}"
            )));
        }
        Ok(Self {
            kernel: Tensor::zeros(&[parts, subparts, size, size]),
            bias: Tensor::zeros(&[parts]),
        })
    }

    pub fn from_parts(kernel: Tensor, bias: Tensor) -> Result<Self> {
        let [p, _, kh, kw] = kernel.shape()[..] else {
            return Err(Error::shape(
                "SpatialDetector",
                format!("kernel must be [P,K,s,s], got {:?}", kernel.shape()),
            ));
        };
        if kh != kw || kh % 2 == 0 || bias.shape() != [p] {
            return Err(Error::shape(
                "SpatialDetector",
                format!("kernel {:?} with bias {:?}", kernel.shape(), bias.shape()),
            ));
        }
        Ok(Self { kernel, bias })
    }

    pub fn size(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn parts(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn subparts(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel(&self) -> &Tensor {
        &self.kernel
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    fn padding(&self) -> usize {
        self.size() / 2
    }

    /// Raw part logits for a subpart map.
    pub fn logits(&self, map: &SubpartMap) -> Result<Tensor> {
        conv2d(&map.responses, &self.kernel, &self.bias, self.padding())
    }

    /// Sigmoid part scores.
    pub fn detect(&self, map: &SubpartMap) -> Result<PartMap> {
        Ok(PartMap {
            scores: self.logits(map)?.map(sigmoid),
            stride: map.stride,
        })
    }

    fn params(&self) -> LayerParams {
        let mut p = LayerParams::new();
        p.insert("kernel", self.kernel.clone()).expect("unique");
        p.insert("bias", self.bias.clone()).expect("unique");
        p
    }

    pub fn to_checkpoint(&self, tag: &str) -> Checkpoint {
        Checkpoint::new(self.params()).with_meta("model", tag)
    }

    pub fn from_checkpoint(ck: &Checkpoint, tag: &str) -> Result<Self> {
        if ck.meta_value("model")? != tag {
            return Err(Error::InvalidArgument(format!("checkpoint is not a {tag}")));
        }
        Self::from_parts(
            ck.tensors.require("kernel")?.clone(),
            ck.tensors.require("bias")?.clone(),
        )
    }
}

/// The 15x15 voting layer of Stage 1.
#[derive(Debug, Clone, PartialEq)]
pub struct VotingConv(SpatialDetector);

impl VotingConv {
    pub const TAG: &'static str = "voting-conv";

    pub fn zeros(parts: usize, subparts: usize) -> Self {
        Self(SpatialDetector::zeros(parts, subparts, VOTING_SIZE).expect("odd size"))
    }

    pub fn new(detector: SpatialDetector) -> Result<Self> {
        if detector.size() != VOTING_SIZE {
            return Err(Error::shape(
                "VotingConv",
                format!(
                    "kernel must be {VOTING_SIZE}x{VOTING_SIZE}, got {0}x{0}",
                    detector.size()
                ),
            ));
        }
        Ok(Self(detector))
    }

    pub fn detector(&self) -> &SpatialDetector {
        &self.0
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.0.to_checkpoint(Self::TAG)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::new(SpatialDetector::from_checkpoint(ck, Self::TAG)?)
    }
}

/// Mid-level features of the baseline CNN (the subpart feature tap).
pub fn extract_features(extractor: &BaselineCnn, image: &Tensor) -> Result<Tensor> {
    extractor.features(image)
}

/// Subpart responses for an image.
pub fn subpart_map(
    extractor: &BaselineCnn,
    dict: &SubpartDict,
    image: &Tensor,
) -> Result<SubpartMap> {
    encode_subparts(&extract_features(extractor, image)?, dict, TAP_STRIDE)
}

/// Stage-1 part maps for an image.
pub fn detect_parts(
    image: &Tensor,
    extractor: &BaselineCnn,
    dict: &SubpartDict,
    voting: &VotingConv,
) -> Result<PartMap> {
    voting
        .detector()
        .detect(&subpart_map(extractor, dict, image)?)
}

/// Cell containing image point `(x, y)` at the given stride.
pub fn cell_of(x: f32, y: f32, stride: usize) -> (i64, i64) {
    (
        (y / stride as f32).floor() as i64,
        (x / stride as f32).floor() as i64,
    )
}

/// Binary targets `[P,h,w]`: a radius-2 disk around each sufficiently
/// visible part centre.
pub fn make_part_targets(parts: &[PartAnnotation], h: usize, w: usize, stride: usize) -> Tensor {
    let mut t = Tensor::zeros(&[NUM_PART_TYPES, h, w]);
    for p in parts
        .iter()
        .filter(|p| p.visible_fraction >= VISIBILITY_THRESHOLD)
    {
        let (cy, cx) = cell_of(p.cx, p.cy, stride);
        for dy in -TARGET_RADIUS..=TARGET_RADIUS {
            for dx in -TARGET_RADIUS..=TARGET_RADIUS {
                let (y, x) = (cy + dy, cx + dx);
                if dy * dy + dx * dx <= TARGET_RADIUS * TARGET_RADIUS
                    && (0..h as i64).contains(&y)
                    && (0..w as i64).contains(&x)
                {
                    t.set3(p.part_type_id, y as usize, x as usize, 1.0);
                }
            }
        }
    }
    t
}

/// Target-mask cells at feature resolution (a cell is on when its centre
/// pixel is).
pub fn mask_cells(mask: &Mask, stride: usize) -> Vec<Vec<bool>> {
    let (h, w) = (mask.height() / stride, mask.width() / stride);
    (0..h)
        .map(|y| {
            (0..w)
                .map(|x| mask.get(y * stride + stride / 2, x * stride + stride / 2))
                .collect()
        })
        .collect()
}

/// One Stage-1 training example at feature resolution.
#[derive(Debug, Clone)]
pub struct DetectorSample {
    pub map: SubpartMap,
    pub targets: Tensor,
    pub object_cells: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub sgd: SgdConfig,
    /// Crop side as a fraction of the map side.
    pub crop_fraction: f32,
    pub min_target_fraction: f32,
}

/// Weighted binary cross-entropy with logits.
///
/// Positive cells are weighted by `neg / pos` computed over the batch; the
/// loss is normalized by the total weight. Returns `(loss, dL/dlogits)`.
pub fn weighted_bce(
    logits: &Tensor,
    targets: &Tensor,
    pos_weight: f64,
    total_weight: f64,
) -> (f64, Tensor) {
    let mut loss = 0.0;
    let grad: Vec<f32> = logits
        .data()
        .iter()
        .zip(targets.data())
        .map(|(&z, &t)| {
            let z = z as f64;
            let w = if t > 0.5 { pos_weight } else { 1.0 };
            // log(1+e^z) - t z, computed stably
            let sp = z.max(0.0) + (-z.abs()).exp().ln_1p();
            loss += w * (sp - t as f64 * z);
            let s = 1.0 / (1.0 + (-z).exp());
            (w * (s - t as f64) / total_weight) as f32
        })
        .collect();
    (
        loss / total_weight,
        Tensor::new(logits.shape().to_vec(), grad).expect("same shape"),
    )
}

fn crop_sample<R: Rng + ?Sized>(
    s: &DetectorSample,
    side: usize,
    min_frac: f32,
    rng: &mut R,
) -> Result<(SubpartMap, Tensor)> {
    let (_, h, w) = s.map.responses.dims3("crop_sample")?;
    let side = side.min(h).min(w);
    let total = s
        .object_cells
        .iter()
        .flatten()
        .filter(|&&b| b)
        .count()
        .max(1) as f32;
    let frac = |y0: usize, x0: usize| {
        s.object_cells[y0..y0 + side]
            .iter()
            .map(|row| row[x0..x0 + side].iter().filter(|&&b| b).count())
            .sum::<usize>() as f32
            / total
    };
    let mut pick = (0, 0, -1.0f32);
    for _ in 0..20 {
        let (y0, x0) = (
            rng.random_range(0..=h - side),
            rng.random_range(0..=w - side),
        );
        let f = frac(y0, x0);
        if f > pick.2 {
            pick = (y0, x0, f);
        }
        if f >= min_frac {
            break;
        }
    }
    let (y0, x0, _) = pick;
    Ok((
        SubpartMap {
            responses: s.map.responses.crop3(y0, x0, side, side)?,
            stride: s.map.stride,
        },
        s.targets.crop3(y0, x0, side, side)?,
    ))
}

/// Trains a zero-initialized detector of the given kernel size with the
/// batch-reweighted BCE objective. Returns the detector and mean loss per
/// epoch.
pub fn train_detector(
    samples: &[DetectorSample],
    size: usize,
    cfg: &DetectorTrainConfig,
) -> Result<(SpatialDetector, Vec<f64>)> {
    cfg.sgd.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no Stage-1 training samples".into()))?;
    let (k, h, _) = first.map.responses.dims3("train_detector")?;
    let parts = first.targets.shape()[0];
    let mut det = SpatialDetector::zeros(parts, k, size)?;
    let mut params = det.params();
    let mut sgd = Sgd::new(cfg.sgd.momentum);
    let side = ((h as f32) * cfg.crop_fraction).round() as usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.sgd.epochs);
    for epoch in 0..cfg.sgd.epochs {
        let mut rng = stream(cfg.sgd.seed, "detector-epoch", epoch as u64);
        order.shuffle(&mut rng);
        let lr = cfg.sgd.lr_at(epoch);
        let (mut epoch_loss, mut batches) = (0.0, 0usize);
        for batch in order.chunks(cfg.sgd.batch_size) {
            let crops = batch
                .iter()
                .map(|&i| crop_sample(&samples[i], side, cfg.min_target_fraction, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let pos: f64 = crops
                .iter()
                .map(|(_, t)| t.data().iter().filter(|&&v| v > 0.5).count() as f64)
                .sum();
            let all: f64 = crops.iter().map(|(_, t)| t.len() as f64).sum();
            let pos_weight = if pos > 0.0 { (all - pos) / pos } else { 1.0 };
            let total_weight = pos * pos_weight + (all - pos);
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for (map, targets) in &crops {
                let z = det.logits(map)?;
                let (l, gz) = weighted_bce(&z, targets, pos_weight, total_weight);
                loss += l;
                let g = conv2d_backward(&map.responses, det.kernel(), &gz, det.padding(), false)?;
                grads.accumulate("kernel", &g.kernel);
                grads.accumulate("bias", &g.bias);
            }
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "detector loss {loss} at epoch {epoch} (lr {lr}, kernel {size}x{size})"
                )));
            }
            sgd.step(&mut params, &grads, lr)?;
            det = SpatialDetector::from_parts(
                params.require("kernel")?.clone(),
                params.require("bias")?.clone(),
            )?;
            epoch_loss += loss;
            batches += 1;
        }
        let mean = epoch_loss / batches as f64;
        log::info!("detector {size}x{size} epoch {epoch}: loss {mean:.4}");
        history.push(mean);
    }
    Ok((det, history))
}
