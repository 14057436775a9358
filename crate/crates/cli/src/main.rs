use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use occbench_cli::pipeline::{self, ModelKind};
use occbench_cli::{recorded, reproduce_all, RunConfig};

/// Occlusion-robust recognition benchmark.
///
/// Environment: OCCBENCH_THREADS caps data-generation parallelism;
/// RUST_LOG controls log verbosity. Exit codes: 0 success, 1 usage error,
/// 2 runtime failure.
#[derive(Parser, Debug)]
#[command(name = "occbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run config; absent keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `data.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset root written by `gen-data`.
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for checkpoints, config and run log.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the train, test-clean, test-occluded and test-masked splits.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Dataset root to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster CNN mid-level features into the subpart dictionary.
    BuildSubparts {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: DataArgs,
        /// Baseline CNN checkpoint providing the feature tap.
        #[arg(long)]
        extractor: PathBuf,
    },
    /// Train the 15x15 voting layer (Stage 1).
    TrainStage1 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: DataArgs,
        /// Baseline CNN checkpoint providing the feature tap.
        #[arg(long)]
        extractor: PathBuf,
        /// Subpart dictionary checkpoint.
        #[arg(long)]
        subparts: PathBuf,
    },
    /// Train the SPP head (Stage 2) on Stage-1 part maps.
    TrainStage2 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: DataArgs,
        /// Baseline CNN checkpoint providing the feature tap.
        #[arg(long)]
        extractor: PathBuf,
        /// Subpart dictionary checkpoint.
        #[arg(long)]
        subparts: PathBuf,
        /// Voting layer checkpoint.
        #[arg(long)]
        voting: PathBuf,
    },
    /// Train the baseline CNN classifier.
    TrainBaseline {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: DataArgs,
    },
    /// Train the context-free (1x1) detector and its Stage-2 head.
    TrainAblation1 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: DataArgs,
        /// Baseline CNN checkpoint providing the feature tap.
        #[arg(long)]
        extractor: PathBuf,
        /// Subpart dictionary checkpoint.
        #[arg(long)]
        subparts: PathBuf,
    },
    /// Train the bag-of-words head on voting part maps.
    TrainAblation2 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: DataArgs,
        /// Baseline CNN checkpoint providing the feature tap.
        #[arg(long)]
        extractor: PathBuf,
        /// Subpart dictionary checkpoint.
        #[arg(long)]
        subparts: PathBuf,
        #[arg(long)]
        voting: PathBuf,
    },
    /// Train the CNN + Hopfield hybrid.
    TrainHybrid {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        io: DataArgs,
        /// Baseline CNN checkpoint providing the feature tap.
        #[arg(long)]
        extractor: PathBuf,
    },
    /// Evaluate one model on the configured test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        model: ModelKind,
        /// Directory holding the model's checkpoints.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for the prediction records.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build report.json and matrix images from `<out>/eval`.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directory; reads `<out>/eval`, writes `<out>/report`.
        #[arg(long)]
        out: PathBuf,
        /// Eval record directory, if not `<out>/eval`.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// CSV of human responses (image_id,count_cat0..count_cat4).
        #[arg(long)]
        human: Option<PathBuf>,
    },
    /// Write the 4x4 object-part heatmaps of a Stage-2 head.
    ExportHeatmaps {
        #[command(flatten)]
        common: Common,
        /// Stage-2 head checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory for the PGM heatmaps and heatmaps.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage from data generation to the report.
    ReproduceAll {
        #[command(flatten)]
        common: Common,
        /// Run root; stages write data/, models/, eval/, report/ and heatmaps/.
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve(c: &Common) -> occbench::Result<RunConfig> {
    RunConfig::resolve(c.config.as_deref(), c.seed)
}

fn run(cmd: Command) -> occbench::Result<Vec<PathBuf>> {
    use pipeline::*;
    match cmd {
        Command::GenData { common, out } => {
            let cfg = resolve(&common)?;
            recorded("gen-data", &cfg, &out, || gen_data(&cfg, &out))
        }
        Command::BuildSubparts {
            common,
            io,
            extractor,
        } => {
            let cfg = resolve(&common)?;
            recorded("build-subparts", &cfg, &io.out, || {
                run_build_subparts(&cfg, &io.manifest, &extractor, &io.out)
            })
        }
        Command::TrainStage1 {
            common,
            io,
            extractor,
            subparts,
        } => {
            let cfg = resolve(&common)?;
            recorded("train-stage1", &cfg, &io.out, || {
                run_train_stage1(&cfg, &io.manifest, &extractor, &subparts, &io.out)
            })
        }
        Command::TrainStage2 {
            common,
            io,
            extractor,
            subparts,
            voting,
        } => {
            let cfg = resolve(&common)?;
            recorded("train-stage2", &cfg, &io.out, || {
                run_train_stage2(&cfg, &io.manifest, &extractor, &subparts, &voting, &io.out)
            })
        }
        Command::TrainBaseline { common, io } => {
            let cfg = resolve(&common)?;
            recorded("train-baseline", &cfg, &io.out, || {
                run_train_baseline(&cfg, &io.manifest, &io.out)
            })
        }
        Command::TrainAblation1 {
            common,
            io,
            extractor,
            subparts,
        } => {
            let cfg = resolve(&common)?;
            recorded("train-ablation1", &cfg, &io.out, || {
                run_train_ablation1(&cfg, &io.manifest, &extractor, &subparts, &io.out)
            })
        }
        Command::TrainAblation2 {
            common,
            io,
            extractor,
            subparts,
            voting,
        } => {
            let cfg = resolve(&common)?;
            recorded("train-ablation2", &cfg, &io.out, || {
                run_train_ablation2(&cfg, &io.manifest, &extractor, &subparts, &voting, &io.out)
            })
        }
        Command::TrainHybrid {
            common,
            io,
            extractor,
        } => {
            let cfg = resolve(&common)?;
            recorded("train-hybrid", &cfg, &io.out, || {
                run_train_hybrid(&cfg, &io.manifest, &extractor, &io.out)
            })
        }
        Command::Eval {
            common,
            manifest,
            model,
            checkpoint,
            out,
        } => {
            let cfg = resolve(&common)?;
            recorded("eval", &cfg, &out, || {
                run_eval(&cfg, &manifest, model, &checkpoint, &out)
            })
        }
        Command::Report {
            common,
            out,
            eval,
            human,
        } => {
            let cfg = resolve(&common)?;
            let eval = eval.unwrap_or_else(|| out.join("eval"));
            let dest = out.join("report");
            recorded("report", &cfg, &dest, || {
                Ok(run_report(&cfg, &eval, &dest, human.as_deref())?.1)
            })
        }
        Command::ExportHeatmaps {
            common,
            checkpoint,
            out,
        } => {
            let cfg = resolve(&common)?;
            recorded("export-heatmaps", &cfg, &out, || {
                run_export_heatmaps(&checkpoint, &out)
            })
        }
        Command::ReproduceAll { common, out } => {
            let cfg = resolve(&common)?;
            reproduce_all(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
