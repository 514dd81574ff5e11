use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use remnet::codec::read_image;
use remnet::config::RunConfig;
use remnet::dataset::{generate, MANIFEST_FILE};
use remnet::pipeline::{evaluate, quality_heatmap, run_augment, run_eval, run_split, run_train, CONFIG_FILE};
use remnet::report::write_text;
use remnet::{init_threads, IoError, IoResult};
use remnet_core::data::{AugmentationSpec, CLUSTER_SIZE};
use remnet_core::gradcheck::standard_suite;

/// Camera model identification with remnant blocks.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Split a manifest into device- and scene-disjoint train/val/test sets.
    Split {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write augmented copies of every image in a manifest.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Comma-separated specs such as `jpeg:70,gamma:0.8`; the config's
        /// list when omitted.
        #[arg(long, value_delimiter = ',')]
        specs: Vec<String>,
    },
    /// Train on a manifest and keep the checkpoint with the lowest
    /// validation loss.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Vote on every image of a manifest with a trained checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Clusters voting per image (config value, default 20).
        #[arg(long)]
        n_votes: Option<usize>,
    },
    /// Quality of every window of an image, as `row col quality` lines.
    ScorePatch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = CLUSTER_SIZE)]
        window: usize,
        /// Window grid spacing (config cluster stride when omitted).
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Train, then evaluate the best checkpoint on the held-out test split.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        n_votes: Option<usize>,
    },
}

fn load_config(common: &Common) -> IoResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(common: &Common) -> IoResult<&Path> {
    common.out.as_deref().ok_or_else(|| IoError::Constraint("--out is required".into()))
}

fn manifest_path<'a>(flag: &'a Option<PathBuf>, cfg: &'a RunConfig) -> IoResult<&'a Path> {
    flag.as_deref()
        .or(cfg.data.manifest.as_deref())
        .ok_or_else(|| IoError::Constraint("no manifest: pass --manifest or set data.manifest".into()))
}

fn run(cli: Cli) -> IoResult<()> {
    init_threads()?;
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let records = generate(cfg.synth.to_core(cfg.seed), out)?;
            println!("wrote {} images and {}", records.len(), out.join(MANIFEST_FILE).display());
        }
        Command::Split { common, manifest } => {
            let cfg = load_config(&common)?;
            let split = run_split(&cfg, manifest_path(&manifest, &cfg)?, out_dir(&common)?)?;
            println!(
                "train {} val {} test {} discarded {}",
                split.train.len(),
                split.val.len(),
                split.test.len(),
                split.discarded.len()
            );
        }
        Command::Augment { common, manifest, specs } => {
            let cfg = load_config(&common)?;
            let specs: Vec<AugmentationSpec> = if specs.is_empty() {
                cfg.data.specs()?
            } else {
                specs.iter().map(|s| s.parse()).collect::<remnet_core::Result<_>>()?
            };
            let all = run_augment(manifest_path(&manifest, &cfg)?, &specs, out_dir(&common)?)?;
            println!("wrote manifest with {} images", all.len());
        }
        Command::Train { common, manifest } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let run = run_train(&cfg, manifest_path(&manifest, &cfg)?, out, &mut print_epoch)?;
            println!("best epoch {} val_loss {:.6} ({:?})", run.outcome.best.epoch, run.outcome.best.val_loss, run.outcome.stop);
        }
        Command::Eval {
            common,
            manifest,
            checkpoint,
            n_votes,
        } => {
            let cfg = load_config(&common)?;
            let n = n_votes.unwrap_or(cfg.eval.n_votes);
            let ev = run_eval(&cfg, &checkpoint, manifest_path(&manifest, &cfg)?, n, out_dir(&common)?)?;
            println!("accuracy {:.2}% over {} images (N = {n})", ev.metrics.accuracy, ev.metrics.images);
        }
        Command::ScorePatch { common, image, window, stride } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let img = read_image(&image)?;
            let map = quality_heatmap(&img, window, stride.unwrap_or(cfg.data.cluster_stride), &cfg.quality())?;
            let mut text = String::from("row\tcol\tquality\n");
            for (r, c, q) in &map {
                writeln!(text, "{r}\t{c}\t{q}").unwrap();
            }
            std::fs::create_dir_all(out).map_err(|e| IoError::io(out, e))?;
            write_text(&out.join("quality.tsv"), &text)?;
            println!("scored {} windows", map.len());
        }
        Command::Gradcheck { common, instances, tolerance } => {
            let cfg = load_config(&common)?;
            let suite = standard_suite(instances, cfg.seed, tolerance)?;
            let mut text = String::from("op\tinstance\tworst_rel_error\tpassed\n");
            for e in &suite {
                writeln!(text, "{}\t{}\t{:e}\t{}", e.op, e.instance, e.report.worst(), e.report.passed()).unwrap();
            }
            print!("{text}");
            if let Some(out) = &common.out {
                std::fs::create_dir_all(out).map_err(|e| IoError::io(out, e))?;
                write_text(&out.join("gradcheck.tsv"), &text)?;
            }
            let failed: Vec<String> = suite.iter().filter(|e| !e.report.passed()).map(|e| format!("{}#{}", e.op, e.instance)).collect();
            if !failed.is_empty() {
                return Err(IoError::Constraint(format!("gradient check failed: {}", failed.join(", "))));
            }
        }
        Command::Run { common, manifest, n_votes } => {
            let cfg = load_config(&common)?;
            let out = out_dir(&common)?;
            let run = run_train(&cfg, manifest_path(&manifest, &cfg)?, out, &mut print_epoch)?;
            let replay = RunConfig::load(&out.join(CONFIG_FILE))?;
            let n = n_votes.unwrap_or(cfg.eval.n_votes);
            let ev = evaluate(&replay, &run.model, &out.join("test.tsv"), n, &out.join("eval"))?;
            println!("test accuracy {:.2}% over {} images (N = {n})", ev.metrics.accuracy, ev.metrics.images);
        }
    }
    Ok(())
}

fn print_epoch(r: &remnet_core::train::EpochRecord) {
    eprintln!("epoch {:>3}  lr {:.1e}  train {:.5}  val {:.5}", r.epoch, r.lr, r.train_loss, r.val_loss);
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\t'], " ");
            eprintln!("error\t{}\t{}\t{msg}", e.kind(), e.exit_code());
            ExitCode::from(e.exit_code())
        }
    }
}

