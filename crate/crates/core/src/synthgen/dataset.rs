//! Dataset generation and loading.
//!
//! Directory layout under the output root:
//!
//! ```text
//! dataset.json                  seed, config hash, resolved config
//! <split>/manifest.json
//! <split>/<id>.ppm              P6 image
//! <split>/<id>.json             sidecar annotations
//! <split>/<id>.target.pbm       target mask
//! <split>/<id>.occluders.pbm    union of occluder masks
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::occlude::{place_occluders, sample_occlusion_ratio, OccluderStyle};
use super::raster::Mask;
use super::scene::{make_scene, OcclusionScene, PartAnnotation};
use crate::error::{Error, Result};
use crate::netpbm::{self, Rgb8};
use crate::rng::stream;
use crate::tensor::Tensor;
use crate::NUM_CATEGORIES;

/// Range of target ratios used for the constant-mask split.
pub const MASKED_RATIO_RANGE: (f64, f64) = (0.7, 0.8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    TestClean,
    TestOccluded,
    /// Constant-mask occluders on the test scenes.
    TestMasked,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Train,
        Split::TestClean,
        Split::TestOccluded,
        Split::TestMasked,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::TestClean => "test-clean",
            Split::TestOccluded => "test-occluded",
            Split::TestMasked => "test-masked",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitCounts {
    pub train: usize,
    /// Scenes per test split; the clean, occluded and masked test splits
    /// share scene ids.
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub counts: SplitCounts,
    pub canvas: usize,
    pub seed: u64,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 2000,
            test: 500,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            counts: SplitCounts::default(),
            canvas: 96,
            seed: 7,
        }
    }
}

impl DataConfig {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub category_id: usize,
    pub occlusion_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub seed: u64,
    pub config_hash: String,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub id: String,
    pub split: Split,
    pub category_id: usize,
    pub occlusion_ratio: f64,
    pub parts: Vec<PartAnnotation>,
    pub occluder_boxes: Vec<[usize; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub seed: u64,
    pub config_hash: String,
    pub config: DataConfig,
    pub splits: Vec<Split>,
}

/// A scene loaded back from disk.
#[derive(Debug, Clone)]
pub struct SceneRecord {
    pub id: String,
    pub split: Split,
    pub category_id: usize,
    pub image: Tensor,
    pub parts: Vec<PartAnnotation>,
    pub occlusion_ratio: f64,
    pub target_mask: Mask,
    pub occluder_mask: Mask,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

fn to_rgb8(img: &Tensor) -> Rgb8 {
    let (_, h, w) = img.dims3("to_rgb8").expect("rank-3 image");
    let plane = h * w;
    let d = img.data();
    let mut data = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            data.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Rgb8 {
        width: w,
        height: h,
        data,
    }
}

fn from_rgb8(img: &Rgb8) -> Tensor {
    let plane = img.width * img.height;
    let mut data = vec![0.0f32; plane * 3];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = img.data[i * 3 + c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, img.height, img.width], data).expect("image shape")
}

fn write_scene(dir: &Path, split: Split, scene: &OcclusionScene) -> Result<ManifestEntry> {
    let img_name = format!("{}.ppm", scene.id);
    netpbm::write_ppm(&dir.join(&img_name), &to_rgb8(&scene.image))?;
    let (h, w) = (scene.height(), scene.width());
    netpbm::write_pbm(
        &dir.join(format!("{}.target.pbm", scene.id)),
        w,
        h,
        scene.target_mask.bits(),
    )?;
    netpbm::write_pbm(
        &dir.join(format!("{}.occluders.pbm", scene.id)),
        w,
        h,
        scene.occluder_union().bits(),
    )?;
    let sidecar = Sidecar {
        id: scene.id.clone(),
        split,
        category_id: scene.category_id,
        occlusion_ratio: scene.occlusion_ratio,
        parts: scene.parts.clone(),
        occluder_boxes: scene.occluders.iter().map(|o| o.bbox).collect(),
    };
    write_json(&dir.join(format!("{}.json", scene.id)), &sidecar)?;
    Ok(ManifestEntry {
        id: scene.id.clone(),
        path: img_name,
        category_id: scene.category_id,
        occlusion_ratio: scene.occlusion_ratio,
    })
}

pub fn train_scene(config: &DataConfig, index: usize) -> Result<OcclusionScene> {
    let mut rng = stream(config.seed, "train-scene", index as u64);
    make_scene(
        &format!("tr-{index:05}"),
        index % NUM_CATEGORIES,
        &mut rng,
        config.canvas,
        config.canvas,
    )
}

pub fn test_scene(config: &DataConfig, index: usize) -> Result<OcclusionScene> {
    let mut rng = stream(config.seed, "test-scene", index as u64);
    make_scene(
        &format!("te-{index:05}"),
        index % NUM_CATEGORIES,
        &mut rng,
        config.canvas,
        config.canvas,
    )
}

/// The three test renders of one scene id: clean, textured-occluded and
/// constant-mask occluded.
pub fn test_variants(config: &DataConfig, index: usize) -> Result<[OcclusionScene; 3]> {
    let clean = test_scene(config, index)?;
    let mut rng = stream(config.seed, "occlude-textured", index as u64);
    let ratio = sample_occlusion_ratio(&mut rng);
    let occluded = place_occluders(&clean, ratio, OccluderStyle::Textured, &mut rng)?;
    let mut rng = stream(config.seed, "occlude-mask", index as u64);
    let ratio = rng.random_range(MASKED_RATIO_RANGE.0..MASKED_RATIO_RANGE.1);
    let masked = place_occluders(&clean, ratio, OccluderStyle::ConstantMask, &mut rng)?;
    Ok([clean, occluded, masked])
}

/// Thread pool honouring `OCCBENCH_THREADS`.
pub fn generation_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("OCCBENCH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

/// Writes all splits under `out` and returns the dataset index.
pub fn generate_dataset(config: &DataConfig, out: &Path) -> Result<DatasetIndex> {
    if config.canvas < super::scene::MIN_CANVAS {
        return Err(Error::InvalidArgument(format!(
            "canvas {} below minimum {}",
            config.canvas,
            super::scene::MIN_CANVAS
        )));
    }
    if config.counts.train == 0 || config.counts.test == 0 {
        return Err(Error::InvalidArgument(
            "split counts must be positive".into(),
        ));
    }
    let dirs: Vec<(Split, PathBuf)> = Split::ALL
        .iter()
        .map(|&s| (s, out.join(s.name())))
        .collect();
    for (_, d) in &dirs {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let hash = config.hash();
    let pool = generation_pool()?;

    let train_dir = out.join(Split::Train.name());
    let train: Vec<ManifestEntry> = pool.install(|| {
        (0..config.counts.train)
            .into_par_iter()
            .map(|i| write_scene(&train_dir, Split::Train, &train_scene(config, i)?))
            .collect::<Result<_>>()
    })?;

    let test: Vec<[ManifestEntry; 3]> = pool.install(|| {
        (0..config.counts.test)
            .into_par_iter()
            .map(|i| {
                let [c, o, m] = test_variants(config, i)?;
                Ok([
                    write_scene(&out.join(Split::TestClean.name()), Split::TestClean, &c)?,
                    write_scene(
                        &out.join(Split::TestOccluded.name()),
                        Split::TestOccluded,
                        &o,
                    )?,
                    write_scene(&out.join(Split::TestMasked.name()), Split::TestMasked, &m)?,
                ])
            })
            .collect::<Result<_>>()
    })?;

    let mut per_split = vec![train, Vec::new(), Vec::new(), Vec::new()];
    for [c, o, m] in test {
        per_split[1].push(c);
        per_split[2].push(o);
        per_split[3].push(m);
    }
    for ((split, dir), entries) in dirs.iter().zip(per_split) {
        let manifest = DatasetManifest {
            split: *split,
            seed: config.seed,
            config_hash: hash.clone(),
            entries,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
    }
    let index = DatasetIndex {
        seed: config.seed,
        config_hash: hash,
        config: config.clone(),
        splits: Split::ALL.to_vec(),
    };
    write_json(&out.join("dataset.json"), &index)?;
    Ok(index)
}

pub fn read_manifest(root: &Path, split: Split) -> Result<DatasetManifest> {
    read_json(&root.join(split.name()).join("manifest.json"))
}

pub fn read_index(root: &Path) -> Result<DatasetIndex> {
    read_json(&root.join("dataset.json"))
}

fn read_mask(path: &Path) -> Result<Mask> {
    let (w, h, bits) = netpbm::read_pbm(path)?;
    Ok(Mask::from_bits(h, w, bits))
}

pub fn load_scene(root: &Path, split: Split, entry: &ManifestEntry) -> Result<SceneRecord> {
    let dir = root.join(split.name());
    let image = from_rgb8(&netpbm::read_ppm(&dir.join(&entry.path))?);
    let sidecar: Sidecar = read_json(&dir.join(format!("{}.json", entry.id)))?;
    Ok(SceneRecord {
        id: entry.id.clone(),
        split,
        category_id: entry.category_id,
        image,
        parts: sidecar.parts,
        occlusion_ratio: entry.occlusion_ratio,
        target_mask: read_mask(&dir.join(format!("{}.target.pbm", entry.id)))?,
        occluder_mask: read_mask(&dir.join(format!("{}.occluders.pbm", entry.id)))?,
    })
}

/// Loads every scene of `split`, in manifest order.
pub fn load_split(root: &Path, split: Split) -> Result<Vec<SceneRecord>> {
    let manifest = read_manifest(root, split)?;
    manifest
        .entries
        .iter()
        .map(|e| load_scene(root, split, e))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DataConfig {
        DataConfig {
            counts: SplitCounts { train: 12, test: 7 },
            canvas: 64,
            seed: 3,
        }
    }

    #[test]
    fn generates_balanced_splits_with_consistent_ids() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        generate_dataset(&cfg, dir.path()).unwrap();
        let train = read_manifest(dir.path(), Split::Train).unwrap();
        assert_eq!(train.entries.len(), 12);
        assert!(train.entries.iter().all(|e| e.occlusion_ratio == 0.0));
        let mut counts = [0usize; NUM_CATEGORIES];
        for e in &train.entries {
            counts[e.category_id] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);

        let clean = read_manifest(dir.path(), Split::TestClean).unwrap();
        let occ = read_manifest(dir.path(), Split::TestOccluded).unwrap();
        let ids = |m: &DatasetManifest| m.entries.iter().map(|e| e.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&clean), ids(&occ));
        assert_eq!(train.config_hash, cfg.hash());
    }

    #[test]
    fn stored_masks_reproduce_ratio_exactly() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small(), dir.path()).unwrap();
        for split in [Split::TestOccluded, Split::TestMasked, Split::Train] {
            for rec in load_split(dir.path(), split).unwrap() {
                let r = super::super::scene::occlusion_ratio(&rec.target_mask, &rec.occluder_mask);
                assert_eq!(r, rec.occlusion_ratio, "{}", rec.id);
                if split == Split::Train {
                    assert_eq!(rec.occluder_mask.count(), 0);
                }
            }
        }
    }

    #[test]
    fn occluded_image_minus_occluders_equals_clean() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(&small(), dir.path()).unwrap();
        let clean = load_split(dir.path(), Split::TestClean).unwrap();
        let occ = load_split(dir.path(), Split::TestOccluded).unwrap();
        for (c, o) in clean.iter().zip(&occ) {
            let (h, w) = (o.occluder_mask.height(), o.occluder_mask.width());
            for ch in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        if !o.occluder_mask.get(y, x) {
                            assert_eq!(c.image.at3(ch, y, x), o.image.at3(ch, y, x));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_pure_function_of_config() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_dataset(&small(), a.path()).unwrap();
        generate_dataset(&small(), b.path()).unwrap();
        for split in Split::ALL {
            let ma = std::fs::read(a.path().join(split.name()).join("manifest.json")).unwrap();
            let mb = std::fs::read(b.path().join(split.name()).join("manifest.json")).unwrap();
            assert_eq!(ma, mb);
            let first = read_manifest(a.path(), split).unwrap().entries[0]
                .path
                .clone();
            assert_eq!(
                std::fs::read(a.path().join(split.name()).join(&first)).unwrap(),
                std::fs::read(b.path().join(split.name()).join(&first)).unwrap()
            );
        }
    }

    #[test]
    fn images_reload_exactly() {
        let cfg = small();
        let scene = train_scene(&cfg, 4).unwrap();
        let back = from_rgb8(&to_rgb8(&scene.image));
        assert_eq!(back, scene.image);
    }

    #[test]
    fn split_names_round_trip() {
        for s in Split::ALL {
            assert_eq!(s.name().parse::<Split>().unwrap(), s);
            assert_eq!(
                serde_json::to_string(&s).unwrap(),
                format!("\"{}\"", s.name())
            );
        }
    }
}
