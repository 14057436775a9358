//! Procedural dataset of part-composed vehicles under controlled occlusion.
//!
//! Training scenes are always occlusion-free. Each test scene id is rendered
//! three ways: clean, covered by 2-4 textured occluders at a ratio drawn from
//! a three-band mixture, and covered by flat constant masks.

mod dataset;
mod layout;
mod occlude;
mod raster;
mod scene;

#[allow(unused_imports)]
pub(crate) use dataset::read_json;
pub(crate) use dataset::write_json;
pub use dataset::{
    generate_dataset, generation_pool, load_scene, load_split, read_index, read_manifest,
    test_scene, test_variants, train_scene, DataConfig, DatasetIndex, DatasetManifest,
    ManifestEntry, SceneRecord, Sidecar, Split, SplitCounts, MASKED_RATIO_RANGE,
};
pub use layout::{
    categories, part_texture, BodyShape, CategorySpec, PartShape, PartSpec, NUM_PART_TYPES,
    PARTS_PER_CATEGORY, PART_SHAPE_IDS,
};
pub use occlude::{
    place_occluders, sample_occlusion_ratio, OccluderStyle, OCCLUDER_SHAPE_IDS, RATIO_BANDS,
    RATIO_TOLERANCE,
};
pub use raster::{Geometry, Mask, Texture};
pub use scene::{make_scene, occlusion_ratio, OccluderLayer, OcclusionScene, PartAnnotation};
