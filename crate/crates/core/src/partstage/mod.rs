//! Stage 1: subpart dictionary and spatial voting part detection.
//!
//! Mid-level CNN features are clustered into `K` subparts. Each cell of a
//! feature map is soft-assigned to the subparts, and a wide convolution over
//! those responses votes for the `P` part types.

mod dict;
mod voting;

use rand::seq::index::sample;

pub use dict::{
    build_subpart_dict, encode_subparts, normalized_cells, KMeansTrace, SubpartDict, SubpartMap,
    SAMPLES_PER_CLUSTER,
};
pub use voting::{
    cell_of, detect_parts, extract_features, make_part_targets, mask_cells, subpart_map,
    train_detector, weighted_bce, DetectorSample, DetectorTrainConfig, PartMap, SpatialDetector,
    VotingConv, TARGET_RADIUS, VISIBILITY_THRESHOLD, VOTING_SIZE,
};

use crate::baselines::{BaselineCnn, TAP_STRIDE};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::synthgen::SceneRecord;
use crate::tensor::Tensor;

/// Name recorded for the feature tap in dictionaries.
pub const SOURCE_LAYER: &str = "baseline-cnn/pool2";

/// Samples `per_image` L2-normalized feature cells from each scene into a
/// `[n,D]` matrix.
pub fn sample_features(
    extractor: &BaselineCnn,
    scenes: &[SceneRecord],
    per_image: usize,
    seed: u64,
) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut dim = 0;
    for (i, s) in scenes.iter().enumerate() {
        if s.occluder_mask.count() > 0 {
            return Err(Error::InvalidArgument(format!(
                "subpart features must come from clean scenes; {} is occluded",
                s.id
            )));
        }
        let cells = normalized_cells(&extract_features(extractor, &s.image)?)?;
        if cells.is_empty() {
            continue;
        }
        dim = cells[0].len();
        let mut rng = stream(seed, "subpart-sample", i as u64);
        for j in sample(&mut rng, cells.len(), per_image.min(cells.len())) {
            rows.extend_from_slice(&cells[j]);
        }
    }
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "no nonzero feature cells to sample".into(),
        ));
    }
    Tensor::new(vec![rows.len() / dim, dim], rows)
}

/// Subpart maps and part targets for every scene.
pub fn detector_samples(
    extractor: &BaselineCnn,
    dict: &SubpartDict,
    scenes: &[SceneRecord],
) -> Result<Vec<DetectorSample>> {
    scenes
        .iter()
        .map(|s| {
            let map = subpart_map(extractor, dict, &s.image)?;
            let (_, h, w) = map.responses.dims3("detector_samples")?;
            Ok(DetectorSample {
                targets: make_part_targets(&s.parts, h, w, TAP_STRIDE),
                object_cells: mask_cells(&s.target_mask, TAP_STRIDE),
                map,
            })
        })
        .collect()
}

/// Trains the 15x15 voting layer on clean samples.
pub fn train_voting(
    samples: &[DetectorSample],
    cfg: &DetectorTrainConfig,
) -> Result<(VotingConv, Vec<f64>)> {
    let (det, history) = train_detector(samples, VOTING_SIZE, cfg)?;
    Ok((VotingConv::new(det)?, history))
}
