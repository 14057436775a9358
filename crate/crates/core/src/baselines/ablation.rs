//! The two Stage-1/Stage-2 ablations: a context-free part detector under
//! the standard head, and a bag-of-words head over voting part maps.

use crate::compstage::{
    normalize_part_maps, part_map_spp, train_head, HeadTrainConfig, HeadTrainLog, SppConfig,
    Stage2Head,
};
use crate::error::{Error, Result};
use crate::partstage::{
    train_detector, DetectorSample, DetectorTrainConfig, PartMap, SpatialDetector, SubpartMap,
    VotingConv,
};
use crate::tensor::{softmax, Checkpoint, Tensor};

/// A part detector whose kernel sees a single subpart cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFreeDetector(SpatialDetector);

impl ContextFreeDetector {
    pub const TAG: &'static str = "context-free-detector";

    pub fn new(detector: SpatialDetector) -> Result<Self> {
        if detector.size() != 1 {
            return Err(Error::shape(
                "ContextFreeDetector",
                format!("kernel must be 1x1, got {0}x{0}", detector.size()),
            ));
        }
        Ok(Self(detector))
    }

    pub fn detector(&self) -> &SpatialDetector {
        &self.0
    }

    pub fn detect(&self, map: &SubpartMap) -> Result<PartMap> {
        self.0.detect(map)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.0.to_checkpoint(Self::TAG)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Self::new(SpatialDetector::from_checkpoint(ck, Self::TAG)?)
    }
}

/// Trained first ablation: context-free detector plus a standard head.
#[derive(Debug, Clone)]
pub struct Ablation1 {
    pub detector: ContextFreeDetector,
    pub head: Stage2Head,
    pub detector_loss: Vec<f64>,
    pub head_log: HeadTrainLog,
}

/// Trains the 1x1 detector with the Stage-1 objective, then a Stage-2 head
/// on its part maps.
pub fn train_ablation1(
    samples: &[DetectorSample],
    labels: &[usize],
    detector_cfg: &DetectorTrainConfig,
    head_cfg: &HeadTrainConfig,
    spp: &SppConfig,
) -> Result<Ablation1> {
    let (det, detector_loss) = train_detector(samples, 1, detector_cfg)?;
    let detector = ContextFreeDetector::new(det)?;
    let inputs = samples
        .iter()
        .map(|s| part_map_spp(&detector.detect(&s.map)?, spp))
        .collect::<Result<Vec<_>>>()?;
    let (head, head_log) = train_head(&inputs, labels, head_cfg)?;
    Ok(Ablation1 {
        detector,
        head,
        detector_loss,
        head_log,
    })
}

/// Dense head over per-part global maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct BowHead(Stage2Head);

impl BowHead {
    pub const TAG: &'static str = "bow-head";

    pub fn new(head: Stage2Head) -> Self {
        Self(head)
    }

    pub fn head(&self) -> &Stage2Head {
        &self.0
    }

    pub fn parts(&self) -> usize {
        self.0.input_len()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.0.to_checkpoint(Self::TAG)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        Stage2Head::from_checkpoint(ck, Self::TAG).map(Self)
    }
}

/// Per-part global maxima of the normalized part map.
pub fn bow_input(map: &PartMap) -> Result<Tensor> {
    let norm = normalize_part_maps(map)?;
    let (p, h, w) = norm.scores.dims3("bow_input")?;
    let plane = h * w;
    let data = norm.scores.data();
    let maxima = (0..p)
        .map(|c| {
            data[c * plane..(c + 1) * plane]
                .iter()
                .copied()
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    Tensor::from_vec(maxima)
}

/// Bag-of-words prediction; dropout is the identity at evaluation.
pub fn bow_predict(map: &PartMap, head: &BowHead) -> Result<Vec<f64>> {
    let input = bow_input(map)?;
    if input.len() != head.parts() {
        return Err(Error::shape(
            "bow_predict",
            format!(
                "head expects {} parts, map has {}",
                head.parts(),
                input.len()
            ),
        ));
    }
    Ok(softmax(head.0.eval_logits(&input)?.data()))
}

/// Trains the bag-of-words head on voting part maps.
pub fn train_ablation2(
    samples: &[DetectorSample],
    labels: &[usize],
    voting: &VotingConv,
    head_cfg: &HeadTrainConfig,
) -> Result<(BowHead, HeadTrainLog)> {
    let inputs = samples
        .iter()
        .map(|s| bow_input(&voting.detector().detect(&s.map)?))
        .collect::<Result<Vec<_>>>()?;
    let (head, log) = train_head(&inputs, labels, head_cfg)?;
    Ok((BowHead(head), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compstage::spp_pool;
    use crate::rng::stream;
    use rand::Rng;

    fn random_map(p: usize, h: usize, w: usize, seed: u64) -> PartMap {
        let mut rng = stream(seed, "test-map", 0);
        let data = (0..p * h * w).map(|_| rng.random::<f32>()).collect();
        PartMap {
            scores: Tensor::new(vec![p, h, w], data).unwrap(),
            stride: 4,
        }
    }

    #[test]
    fn bow_input_is_scale_one_block() {
        let map = random_map(20, 24, 24, 1);
        let cfg = SppConfig::default();
        let spp = spp_pool(&normalize_part_maps(&map).unwrap().scores, &cfg).unwrap();
        let off = cfg.block_offset(2, 20);
        assert_eq!(bow_input(&map).unwrap().data(), &spp.data()[off..off + 20]);
    }

    #[test]
    fn context_free_detector_rejects_wide_kernels() {
        let wide = SpatialDetector::zeros(20, 8, 3).unwrap();
        assert!(ContextFreeDetector::new(wide).is_err());
        assert!(ContextFreeDetector::new(SpatialDetector::zeros(20, 8, 1).unwrap()).is_ok());
    }

    #[test]
    fn bow_checkpoint_round_trip() {
        let head = BowHead::new(Stage2Head::zeros(20, 0.1).unwrap());
        let back = BowHead::from_checkpoint(&head.to_checkpoint()).unwrap();
        assert_eq!(back, head);
        let ck = head.to_checkpoint();
        assert!(Stage2Head::from_checkpoint(&ck, Stage2Head::TAG).is_err());
    }
}
