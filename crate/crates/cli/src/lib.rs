//! Command-line pipeline for the occlusion benchmark: configuration,
//! provenance records and the stages chained by `reproduce-all`.

pub mod config;
pub mod pipeline;
pub mod record;

use std::path::{Path, PathBuf};

use occbench::{Error, Result};

pub use config::RunConfig;
pub use pipeline::{ModelKind, RunLayout};
pub use record::{RunRecord, CONFIG_FILE, RUNS_LOG};

/// Writes the resolved config into `dir`.
pub fn archive_config(cfg: &RunConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, cfg.to_pretty_json()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Runs `f` as command `name`: archives the config into `dir` and appends
/// a run record there, flagged incomplete when `f` fails.
pub fn recorded(
    name: &str,
    cfg: &RunConfig,
    dir: &Path,
    f: impl FnOnce() -> Result<Vec<PathBuf>>,
) -> Result<Vec<PathBuf>> {
    archive_config(cfg, dir)?;
    let rec = RunRecord::start(name, &cfg.hash(), cfg.seed());
    let outcome = f();
    rec.finish(&outcome).append(dir)?;
    outcome
}

/// One `reproduce-all` stage, returning the artifacts it wrote.
type Stage<'a> = Box<dyn Fn() -> Result<Vec<PathBuf>> + 'a>;

/// The full experiment from data generation to the report and heatmaps.
pub fn reproduce_all(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    use pipeline::*;
    let l = RunLayout::new(out);
    let (data, models) = (l.data(), l.models());
    let cnn = models.join(CNN_CKPT);
    let dict = models.join(DICT_CKPT);
    let voting = models.join(VOTING_CKPT);
    let mut artifacts = Vec::new();
    let stages: Vec<(&str, Stage<'_>)> = vec![
        ("gen-data", Box::new(|| gen_data(cfg, &data))),
        (
            "train-baseline",
            Box::new(|| run_train_baseline(cfg, &data, &models)),
        ),
        (
            "build-subparts",
            Box::new(|| run_build_subparts(cfg, &data, &cnn, &models)),
        ),
        (
            "train-stage1",
            Box::new(|| run_train_stage1(cfg, &data, &cnn, &dict, &models)),
        ),
        (
            "train-stage2",
            Box::new(|| run_train_stage2(cfg, &data, &cnn, &dict, &voting, &models)),
        ),
        (
            "train-ablation1",
            Box::new(|| run_train_ablation1(cfg, &data, &cnn, &dict, &models)),
        ),
        (
            "train-ablation2",
            Box::new(|| run_train_ablation2(cfg, &data, &cnn, &dict, &voting, &models)),
        ),
        (
            "train-hybrid",
            Box::new(|| run_train_hybrid(cfg, &data, &cnn, &models)),
        ),
        (
            "eval",
            Box::new(|| {
                let mut paths = Vec::new();
                for kind in ModelKind::ALL {
                    paths.extend(run_eval(cfg, &data, kind, &models, &l.eval())?);
                }
                Ok(paths)
            }),
        ),
        (
            "report",
            Box::new(|| Ok(run_report(cfg, &l.eval(), &l.report(), None)?.1)),
        ),
        (
            "export-heatmaps",
            Box::new(|| run_export_heatmaps(&models.join(HEAD_CKPT), &l.heatmaps())),
        ),
    ];
    for (name, stage) in stages {
        log::info!("reproduce-all: {name}");
        artifacts.extend(recorded(name, cfg, out, stage)?);
    }
    Ok(artifacts)
}
