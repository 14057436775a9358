//! Pipeline stages shared by the subcommands and `reproduce-all`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use occbench::baselines::{
    bow_predict, train_ablation1, train_ablation2, train_baseline_cnn, BaselineCnn, BowHead,
    CnnTrainConfig, ContextFreeDetector,
};
use occbench::compstage::{
    export_heatmaps, part_map_spp, stage2_predict, train_stage2, HeadTrainConfig, SppConfig,
    Stage2Head,
};
use occbench::evalkit::{
    emit_report, ingest_responses, CategoricalPrediction, Report, ReportInputs,
};
use occbench::hopfield::{hybrid_predict, train_hybrid, HingeConfig, HybridConfig, HybridModel};
use occbench::partstage::{
    build_subpart_dict, detector_samples, sample_features, subpart_map, train_voting,
    DetectorSample, DetectorTrainConfig, SubpartDict, VotingConv, SOURCE_LAYER,
};
use occbench::synthgen::{generate_dataset, load_split, SceneRecord, Split, NUM_PART_TYPES};
use occbench::tensor::{Checkpoint, SgdConfig};
use occbench::{Error, Result};

use crate::config::RunConfig;

pub const CNN_CKPT: &str = "baseline-cnn.ckpt";
pub const DICT_CKPT: &str = "subpart-dict.ckpt";
pub const VOTING_CKPT: &str = "voting-conv.ckpt";
pub const HEAD_CKPT: &str = "stage2-head.ckpt";
pub const ABLATION1_DETECTOR_CKPT: &str = "ablation1-detector.ckpt";
pub const ABLATION1_HEAD_CKPT: &str = "ablation1-head.ckpt";
pub const BOW_CKPT: &str = "bow-head.ckpt";
pub const HYBRID_CKPT: &str = "hybrid.ckpt";

/// Feature vectors sampled per training image for clustering.
pub const SAMPLES_PER_IMAGE: usize = 32;
const MOMENTUM: f32 = 0.9;
const BATCH: usize = 16;

/// Standard directory layout of one run.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn heatmaps(&self) -> PathBuf {
        self.root.join("heatmaps")
    }
}

/// The evaluable models.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    TwoStage,
    Ablation1,
    Ablation2,
    Cnn,
    /// Evaluated with and without Hopfield recall.
    Hybrid,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::TwoStage,
        ModelKind::Ablation1,
        ModelKind::Ablation2,
        ModelKind::Cnn,
        ModelKind::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TwoStage => "two-stage",
            ModelKind::Ablation1 => "ablation1",
            ModelKind::Ablation2 => "ablation2",
            ModelKind::Cnn => "cnn",
            ModelKind::Hybrid => "hybrid",
        }
    }

    /// Checkpoint files the model needs, relative to the models directory.
    pub fn checkpoints(self) -> &'static [&'static str] {
        match self {
            ModelKind::TwoStage => &[CNN_CKPT, DICT_CKPT, VOTING_CKPT, HEAD_CKPT],
            ModelKind::Ablation1 => &[
                CNN_CKPT,
                DICT_CKPT,
                ABLATION1_DETECTOR_CKPT,
                ABLATION1_HEAD_CKPT,
            ],
            ModelKind::Ablation2 => &[CNN_CKPT, DICT_CKPT, VOTING_CKPT, BOW_CKPT],
            ModelKind::Cnn => &[CNN_CKPT],
            ModelKind::Hybrid => &[CNN_CKPT, HYBRID_CKPT],
        }
    }
}

/// One evaluated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub label: usize,
    #[serde(flatten)]
    pub prediction: CategoricalPrediction,
}

/// Predictions of one model (or one hybrid variant) on the evaluated splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub model: String,
    pub splits: BTreeMap<Split, Vec<LabeledPrediction>>,
}

fn sgd(cfg: &RunConfig, lr: f32, epochs: usize) -> SgdConfig {
    SgdConfig {
        lr,
        momentum: MOMENTUM,
        batch_size: BATCH,
        epochs,
        seed: cfg.seed(),
    }
}

pub fn detector_config(cfg: &RunConfig) -> DetectorTrainConfig {
    DetectorTrainConfig {
        sgd: sgd(cfg, cfg.stage1.lr, cfg.stage1.epochs),
        crop_fraction: 0.75,
        min_target_fraction: 0.25,
    }
}

pub fn head_config(cfg: &RunConfig) -> HeadTrainConfig {
    HeadTrainConfig {
        sgd: sgd(cfg, cfg.stage2.lr, cfg.stage2.epochs),
        dropout: cfg.stage2.dropout,
    }
}

pub fn hybrid_config(cfg: &RunConfig) -> HybridConfig {
    HybridConfig {
        storage_rule: cfg.hybrid.storage_rule,
        storage_ratio: cfg.hybrid.storage_ratio,
        max_steps: cfg.hybrid.max_steps,
        hinge: HingeConfig {
            seed: cfg.seed(),
            ..HingeConfig::default()
        },
        seed: cfg.seed(),
    }
}

fn save(ck: &Checkpoint, dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    ck.save(&path)?;
    Ok(path)
}

pub fn load_cnn(path: &Path) -> Result<BaselineCnn> {
    BaselineCnn::from_checkpoint(&Checkpoint::load(path)?)
}

pub fn load_dict(path: &Path) -> Result<SubpartDict> {
    SubpartDict::from_checkpoint(&Checkpoint::load(path)?)
}

pub fn load_voting(path: &Path) -> Result<VotingConv> {
    VotingConv::from_checkpoint(&Checkpoint::load(path)?)
}

pub fn load_head(path: &Path) -> Result<Stage2Head> {
    Stage2Head::from_checkpoint(&Checkpoint::load(path)?, Stage2Head::TAG)
}

fn train_scenes(data: &Path) -> Result<Vec<SceneRecord>> {
    load_split(data, Split::Train)
}

fn labels(scenes: &[SceneRecord]) -> Vec<usize> {
    scenes.iter().map(|s| s.category_id).collect()
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    generate_dataset(&cfg.data, out)?;
    Ok(vec![out.to_path_buf()])
}

pub fn run_train_baseline(cfg: &RunConfig, data: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let scenes = train_scenes(data)?;
    let tcfg = CnnTrainConfig::new(sgd(cfg, cfg.baseline.lr, cfg.baseline.epochs));
    let (cnn, _) = train_baseline_cnn(&scenes, &tcfg)?;
    Ok(vec![save(&cnn.to_checkpoint(), out, CNN_CKPT)?])
}

pub fn run_build_subparts(
    cfg: &RunConfig,
    data: &Path,
    extractor: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let cnn = load_cnn(extractor)?;
    let scenes = train_scenes(data)?;
    let feats = sample_features(&cnn, &scenes, SAMPLES_PER_IMAGE, cfg.seed())?;
    let (dict, trace) = build_subpart_dict(
        &feats,
        cfg.stage1.k,
        cfg.stage1.tau,
        SOURCE_LAYER,
        cfg.seed(),
    )?;
    log::info!(
        "k-means: {} iterations, {} empty-cluster repairs",
        trace.inertia.len(),
        trace.repairs
    );
    Ok(vec![save(&dict.to_checkpoint(), out, DICT_CKPT)?])
}

/// Clean training scenes encoded for Stage 1, with their labels.
pub fn stage1_samples(
    data: &Path,
    extractor: &Path,
    subparts: &Path,
) -> Result<(Vec<DetectorSample>, Vec<usize>)> {
    let cnn = load_cnn(extractor)?;
    let dict = load_dict(subparts)?;
    let scenes = train_scenes(data)?;
    Ok((detector_samples(&cnn, &dict, &scenes)?, labels(&scenes)))
}

pub fn run_train_stage1(
    cfg: &RunConfig,
    data: &Path,
    extractor: &Path,
    subparts: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let (samples, _) = stage1_samples(data, extractor, subparts)?;
    let (voting, history) = train_voting(&samples, &detector_config(cfg))?;
    log::info!("voting loss per epoch: {history:?}");
    Ok(vec![save(&voting.to_checkpoint(), out, VOTING_CKPT)?])
}

pub fn run_train_stage2(
    cfg: &RunConfig,
    data: &Path,
    extractor: &Path,
    subparts: &Path,
    voting: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let voting = load_voting(voting)?;
    let (samples, labels) = stage1_samples(data, extractor, subparts)?;
    let spp = SppConfig::default();
    let inputs = samples
        .iter()
        .map(|s| part_map_spp(&voting.detector().detect(&s.map)?, &spp))
        .collect::<Result<Vec<_>>>()?;
    let (head, log) = train_stage2(&inputs, &labels, &head_config(cfg))?;
    log::info!("stage-2 loss per epoch: {:?}", log.epoch_loss);
    Ok(vec![save(
        &head.to_checkpoint(Stage2Head::TAG),
        out,
        HEAD_CKPT,
    )?])
}

pub fn run_train_ablation1(
    cfg: &RunConfig,
    data: &Path,
    extractor: &Path,
    subparts: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let (samples, labels) = stage1_samples(data, extractor, subparts)?;
    let ab = train_ablation1(
        &samples,
        &labels,
        &detector_config(cfg),
        &head_config(cfg),
        &SppConfig::default(),
    )?;
    Ok(vec![
        save(&ab.detector.to_checkpoint(), out, ABLATION1_DETECTOR_CKPT)?,
        save(
            &ab.head.to_checkpoint(Stage2Head::TAG),
            out,
            ABLATION1_HEAD_CKPT,
        )?,
    ])
}

pub fn run_train_ablation2(
    cfg: &RunConfig,
    data: &Path,
    extractor: &Path,
    subparts: &Path,
    voting: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let voting = load_voting(voting)?;
    let (samples, labels) = stage1_samples(data, extractor, subparts)?;
    let (bow, _) = train_ablation2(&samples, &labels, &voting, &head_config(cfg))?;
    Ok(vec![save(&bow.to_checkpoint(), out, BOW_CKPT)?])
}

pub fn run_train_hybrid(
    cfg: &RunConfig,
    data: &Path,
    extractor: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let cnn = load_cnn(extractor)?;
    let scenes = train_scenes(data)?;
    let model = train_hybrid(&cnn, &scenes, &hybrid_config(cfg))?;
    Ok(vec![save(&model.to_checkpoint(), out, HYBRID_CKPT)?])
}

/// Fails with the first missing checkpoint of `kind`.
pub fn require_checkpoints(kind: ModelKind, models: &Path) -> Result<()> {
    for name in kind.checkpoints() {
        let p = models.join(name);
        if !p.is_file() {
            return Err(Error::MissingCheckpoint(p));
        }
    }
    Ok(())
}

type Predictor = Box<dyn Fn(&SceneRecord) -> Result<Vec<f64>>>;

/// Builds `(record name, predictor)` pairs for a model kind.
fn predictors(kind: ModelKind, models: &Path, cfg: &RunConfig) -> Result<Vec<(String, Predictor)>> {
    require_checkpoints(kind, models)?;
    let cnn = load_cnn(&models.join(CNN_CKPT))?;
    let spp = SppConfig::default();
    Ok(match kind {
        ModelKind::Cnn => vec![(
            kind.name().into(),
            Box::new(move |s: &SceneRecord| cnn.predict(&s.image)) as Predictor,
        )],
        ModelKind::TwoStage => {
            let dict = load_dict(&models.join(DICT_CKPT))?;
            let voting = load_voting(&models.join(VOTING_CKPT))?;
            let head = load_head(&models.join(HEAD_CKPT))?;
            vec![(
                kind.name().into(),
                Box::new(move |s: &SceneRecord| {
                    let map = voting
                        .detector()
                        .detect(&subpart_map(&cnn, &dict, &s.image)?)?;
                    stage2_predict(&part_map_spp(&map, &spp)?, &head)
                }),
            )]
        }
        ModelKind::Ablation1 => {
            let dict = load_dict(&models.join(DICT_CKPT))?;
            let det = ContextFreeDetector::from_checkpoint(&Checkpoint::load(
                &models.join(ABLATION1_DETECTOR_CKPT),
            )?)?;
            let head = load_head(&models.join(ABLATION1_HEAD_CKPT))?;
            vec![(
                kind.name().into(),
                Box::new(move |s: &SceneRecord| {
                    let map = det.detect(&subpart_map(&cnn, &dict, &s.image)?)?;
                    stage2_predict(&part_map_spp(&map, &spp)?, &head)
                }),
            )]
        }
        ModelKind::Ablation2 => {
            let dict = load_dict(&models.join(DICT_CKPT))?;
            let voting = load_voting(&models.join(VOTING_CKPT))?;
            let bow = BowHead::from_checkpoint(&Checkpoint::load(&models.join(BOW_CKPT))?)?;
            vec![(
                kind.name().into(),
                Box::new(move |s: &SceneRecord| {
                    bow_predict(
                        &voting
                            .detector()
                            .detect(&subpart_map(&cnn, &dict, &s.image)?)?,
                        &bow,
                    )
                }),
            )]
        }
        ModelKind::Hybrid => {
            let model = std::rc::Rc::new(HybridModel::from_checkpoint(&Checkpoint::load(
                &models.join(HYBRID_CKPT),
            )?)?);
            let cnn = std::rc::Rc::new(cnn);
            let steps = cfg.hybrid.max_steps;
            let (m2, c2) = (model.clone(), cnn.clone());
            vec![
                (
                    "hybrid".into(),
                    Box::new(move |s: &SceneRecord| {
                        hybrid_predict(&model, &cnn, &s.image, true, steps)
                    }) as Predictor,
                ),
                (
                    "hybrid-no-hopfield".into(),
                    Box::new(move |s: &SceneRecord| {
                        hybrid_predict(&m2, &c2, &s.image, false, steps)
                    }),
                ),
            ]
        }
    })
}

/// Evaluates one model on the configured test splits and writes one
/// `<name>.json` per produced record into `out`.
pub fn run_eval(
    cfg: &RunConfig,
    data: &Path,
    kind: ModelKind,
    models: &Path,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let preds = predictors(kind, models, cfg)?;
    let mut records: Vec<EvalRecord> = preds
        .iter()
        .map(|(name, _)| EvalRecord {
            model: name.clone(),
            splits: BTreeMap::new(),
        })
        .collect();
    for &split in &cfg.eval.splits {
        let scenes = load_split(data, split)?;
        for (rec, (_, f)) in records.iter_mut().zip(&preds) {
            let rows = scenes
                .iter()
                .map(|s| {
                    Ok(LabeledPrediction {
                        label: s.category_id,
                        prediction: CategoricalPrediction::new(s.id.clone(), &f(s)?)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rec.splits.insert(split, rows);
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    records
        .iter()
        .map(|r| {
            let path = out.join(format!("{}.json", r.model));
            write_json(&path, r)?;
            Ok(path)
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_eval(path: &Path) -> Result<EvalRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rec: EvalRecord = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    for rows in rec.splits.values() {
        for r in rows {
            CategoricalPrediction::new(r.prediction.id.clone(), &r.prediction.probabilities)?;
        }
    }
    Ok(rec)
}

/// Collects every `*.json` eval record in `eval_dir` (sorted by file name)
/// and writes the report into `out`.
pub fn run_report(
    cfg: &RunConfig,
    eval_dir: &Path,
    out: &Path,
    human: Option<&Path>,
) -> Result<(Report, Vec<PathBuf>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(eval_dir)
        .map_err(|e| Error::io(eval_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut inputs = ReportInputs {
        seed: cfg.seed(),
        config_hash: cfg.hash(),
        ..ReportInputs::default()
    };
    for f in &files {
        let rec = read_eval(f)?;
        let mut splits = BTreeMap::new();
        for (split, rows) in rec.splits {
            let labels = inputs.labels.entry(split).or_default();
            for r in &rows {
                if let Some(&prev) = labels.get(&r.prediction.id) {
                    if prev != r.label {
                        return Err(Error::InvalidArgument(format!(
                            "{}: label of {} disagrees with another eval record",
                            f.display(),
                            r.prediction.id
                        )));
                    }
                }
                labels.insert(r.prediction.id.clone(), r.label);
            }
            splits.insert(split, rows.into_iter().map(|r| r.prediction).collect());
        }
        inputs.models.insert(rec.model, splits);
    }
    if inputs.models.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no eval records in {}; run `eval` first",
            eval_dir.display()
        )));
    }
    if let Some(h) = human {
        inputs.human = Some(ingest_responses(h)?);
    }
    let report = emit_report(&inputs, out)?;
    Ok((report, vec![out.join("report.json")]))
}

pub fn run_export_heatmaps(head: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let head = load_head(head)?;
    export_heatmaps(&head, NUM_PART_TYPES, &SppConfig::default(), out)?;
    Ok(vec![out.to_path_buf()])
}
