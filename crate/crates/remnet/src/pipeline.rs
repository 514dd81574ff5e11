//! Whole-run operations behind the command-line subcommands. Each writes
//! only beneath its output directory and never touches its inputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use remnet_core::data::{
    augment, select_clusters, split_by_device_scene, window_origins, AugmentationSpec, ClusterOrder, ClusterRecord, Image,
    ImageRecord, QualityConstants, Split,
};
use remnet_core::eval::{accuracy, confusion_matrix, predict_cluster, record_from, sweep_predictions, weighted_score, ClusterPrediction, PatchClassifier, PredictionRecord};
use remnet_core::train::{EpochRecord, TrainOutcome, TrainSample};
use serde::Serialize;

use crate::cache::ClusterCache;
use crate::checkpoint::{self, CheckpointMeta};
use crate::codec::{write_png, BaselineJpeg};
use crate::config::RunConfig;
use crate::dataset::load_images;
use crate::error::{IoError, IoResult};
use crate::manifest::{read_manifest, rebase, write_manifest};
use crate::model::AnyModel;
use crate::report::{format_confusion, format_history, format_predictions, format_xy, write_text};

pub const CONFIG_FILE: &str = "config.toml";
pub const HISTORY_FILE: &str = "history.tsv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const METRICS_FILE: &str = "metrics.toml";
pub const CONFUSION_FILE: &str = "confusion.tsv";
pub const PREDICTIONS_FILE: &str = "predictions.tsv";
pub const SWEEP_FILE: &str = "sweep_best.txt";
pub const POOR_SWEEP_FILE: &str = "sweep_worst.txt";

fn create_dir(dir: &Path) -> IoResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))
}

/// Number of classes implied by a manifest (largest label plus one).
pub fn class_count(records: &[ImageRecord]) -> IoResult<usize> {
    let n = records.iter().map(|r| r.model_label + 1).max().ok_or_else(|| IoError::Constraint("manifest is empty".into()))?;
    if n < 2 {
        return Err(IoError::Constraint("need at least two camera models".into()));
    }
    Ok(n)
}

/// Splits a manifest and writes `train.tsv`, `val.tsv`, `test.tsv` and
/// `discarded.tsv` into `out`. An unsatisfiable split writes
/// `violations.txt` and fails.
pub fn run_split(cfg: &RunConfig, manifest: &Path, out: &Path) -> IoResult<Split> {
    let records = read_manifest(manifest)?;
    let split = split_by_device_scene(&records, &cfg.split_config())?;
    create_dir(out)?;
    for (name, set) in [("train", &split.train), ("val", &split.val), ("test", &split.test), ("discarded", &split.discarded)] {
        write_manifest(&out.join(format!("{name}.tsv")), &rebase(set, manifest, out))?;
    }
    if !split.violations.is_empty() {
        write_text(&out.join("violations.txt"), &(split.violations.join("\n") + "\n"))?;
        return Err(IoError::Constraint(split.violations.join("; ")));
    }
    Ok(split)
}

/// Writes augmented copies of every image plus a manifest listing the
/// originals and the copies. Copies keep device, scene and label.
pub fn run_augment(manifest: &Path, specs: &[AugmentationSpec], out: &Path) -> IoResult<Vec<ImageRecord>> {
    for s in specs {
        s.validate()?;
    }
    let records = read_manifest(manifest)?;
    let images = load_images(manifest, &records)?;
    create_dir(out)?;
    let copies = records
        .par_iter()
        .zip(&images)
        .map(|(r, img)| {
            specs
                .iter()
                .map(|&spec| {
                    let aug = augment(img, spec, &BaselineJpeg)?;
                    let stem = Path::new(&r.path).with_extension("");
                    let rel = PathBuf::from(format!("{}_{}.png", stem.display(), spec.to_string().replace(':', "")));
                    let path = out.join(&rel);
                    create_dir(path.parent().expect("joined path has a parent"))?;
                    write_png(&path, &aug)?;
                    Ok(ImageRecord {
                        path: rel.to_string_lossy().into_owned(),
                        width: aug.width(),
                        height: aug.height(),
                        ..r.clone()
                    })
                })
                .collect::<IoResult<Vec<_>>>()
        })
        .collect::<IoResult<Vec<_>>>()?;
    let mut all = rebase(&records, manifest, out);
    all.extend(copies.into_iter().flatten());
    write_manifest(&out.join("manifest.tsv"), &all)?;
    Ok(all)
}

/// Cluster selection for every image, through the cache when one is
/// configured.
pub fn clusters_for(
    images: &[Arc<Image>],
    count: usize,
    stride: usize,
    order: ClusterOrder,
    k: &QualityConstants,
    cache: Option<&ClusterCache>,
) -> IoResult<Vec<Vec<ClusterRecord>>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let ex = match cache {
                Some(c) => c.select(i, img, count, stride, order, k)?,
                None => select_clusters(i, img, count, stride, order, k)?,
            };
            Ok(ex.clusters)
        })
        .collect()
}

/// Training samples: the top clusters of each image, and with `specs` the
/// top clusters of each augmented copy as well. Clusters of augmented
/// copies own their pixels so the full copies can be dropped.
pub fn prepare_samples(
    images: &[(ImageRecord, Arc<Image>)],
    clusters_per_image: usize,
    stride: usize,
    k: &QualityConstants,
    specs: &[AugmentationSpec],
    cache: Option<&ClusterCache>,
) -> IoResult<Vec<TrainSample>> {
    let plain: Vec<Arc<Image>> = images.iter().map(|(_, i)| Arc::clone(i)).collect();
    let mut samples: Vec<TrainSample> = clusters_for(&plain, clusters_per_image, stride, ClusterOrder::Best, k, cache)?
        .into_iter()
        .zip(images)
        .flat_map(|(cs, (r, _))| cs.into_iter().map(|c| TrainSample { cluster: c, label: r.model_label }))
        .collect();
    for (v, &spec) in specs.iter().enumerate() {
        let extra = images
            .par_iter()
            .enumerate()
            .map(|(i, (r, img))| {
                let aug = Arc::new(augment(img, spec, &BaselineJpeg)?);
                let index = (v + 1) * images.len() + i;
                let ex = match cache {
                    Some(c) => c.select(index, &aug, clusters_per_image, stride, ClusterOrder::Best, k)?,
                    None => select_clusters(index, &aug, clusters_per_image, stride, ClusterOrder::Best, k)?,
                };
                ex.clusters
                    .iter()
                    .map(|c| {
                        let own = ClusterRecord {
                            image: Arc::new(c.pixels()),
                            origin: (0, 0),
                            ..c.clone()
                        };
                        Ok(TrainSample { cluster: own, label: r.model_label })
                    })
                    .collect::<IoResult<Vec<_>>>()
            })
            .collect::<IoResult<Vec<_>>>()?;
        samples.extend(extra.into_iter().flatten());
    }
    Ok(samples)
}

fn load_set(manifest: &Path, records: Vec<ImageRecord>) -> IoResult<Vec<(ImageRecord, Arc<Image>)>> {
    let images = load_images(manifest, &records)?;
    Ok(records.into_iter().zip(images).collect())
}

#[derive(Debug)]
pub struct TrainRun {
    pub model: AnyModel,
    pub outcome: TrainOutcome,
    pub split: Split,
}

/// Splits `manifest`, trains on the train/val parts and writes the
/// resolved config, split manifests, history and best checkpoint to `out`.
/// The model returned carries the best weights.
pub fn run_train(cfg: &RunConfig, manifest: &Path, out: &Path, on_epoch: &mut dyn FnMut(&EpochRecord)) -> IoResult<TrainRun> {
    let manifest_abs = std::path::absolute(manifest).map_err(|e| IoError::io(manifest, e))?;
    let mut resolved = cfg.clone();
    resolved.data.manifest = Some(manifest_abs.clone());
    let n_class = class_count(&read_manifest(manifest)?)?;
    let desc = resolved.resolve_model(n_class)?;
    if desc.n_class != n_class {
        return Err(IoError::Constraint(format!("model has {} classes, manifest has {n_class}", desc.n_class)));
    }
    resolved.model = Some(desc.clone());
    resolved.arch_path = None;
    let tc = resolved.train_config();
    tc.validate()?;
    create_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &resolved.to_toml())?;
    let split = run_split(&resolved, manifest, out)?;

    let k = resolved.quality();
    let specs = if resolved.data.augment { resolved.data.specs()? } else { Vec::new() };
    let cache = resolved.data.cache_dir.as_deref().map(ClusterCache::new).transpose()?;
    let n = resolved.data.train_clusters();
    let stride = resolved.data.cluster_stride;
    let train_set = prepare_samples(&load_set(manifest, split.train.clone())?, n, stride, &k, &specs, cache.as_ref())?;
    let val_set = prepare_samples(&load_set(manifest, split.val.clone())?, n, stride, &k, &specs, cache.as_ref())?;

    let mut model = AnyModel::build(&desc, resolved.seed)?;
    let outcome = model.train(&train_set, &val_set, &tc, on_epoch)?;
    write_text(&out.join(HISTORY_FILE), &format_history(&outcome.history))?;
    *model.store_mut() = outcome.best.store.clone();
    let meta = CheckpointMeta {
        epoch: outcome.best.epoch as u32,
        val_loss: outcome.best.val_loss,
        descriptor: desc,
    };
    checkpoint::save(&out.join(CHECKPOINT_FILE), &meta, model.store())?;
    Ok(TrainRun { model, outcome, split })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub images: usize,
    pub n_votes: usize,
    /// Image-level accuracy in percent.
    pub accuracy: f64,
    /// Accuracy in percent with the top `n` clusters voting.
    pub sweep: Vec<(usize, f64)>,
    /// Same with the lowest-quality clusters voting.
    pub poor_quality_sweep: Option<Vec<(usize, f64)>>,
    pub manipulated_accuracy: Option<f64>,
    pub weighted_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub metrics: Metrics,
    pub records: Vec<PredictionRecord>,
    pub confusion: Vec<Vec<usize>>,
}

fn predict_all(model: &AnyModel, clusters: &[Vec<ClusterRecord>]) -> IoResult<Vec<Vec<ClusterPrediction>>> {
    clusters
        .par_iter()
        .map(|cs| {
            if cs.is_empty() {
                return Err(IoError::Constraint("an image yielded no clusters".into()));
            }
            Ok(cs.iter().map(|c| predict_cluster(model, c)).collect::<remnet_core::Result<Vec<_>>>()?)
        })
        .collect()
}

/// Votes on every image of `manifest` with `model` and writes metrics, the
/// confusion matrix, the prediction dump and the sweep plot data to `out`.
pub fn evaluate(cfg: &RunConfig, model: &AnyModel, manifest: &Path, n_votes: usize, out: &Path) -> IoResult<EvalRun> {
    if n_votes == 0 {
        return Err(IoError::Constraint("n_votes must be positive".into()));
    }
    let records = read_manifest(manifest)?;
    let n_class = model.n_class();
    if let Some(r) = records.iter().find(|r| r.model_label >= n_class) {
        return Err(IoError::Constraint(format!("{}: label {} but the model has {n_class} classes", r.path, r.model_label)));
    }
    let images = load_images(manifest, &records)?;
    let labels: Vec<usize> = records.iter().map(|r| r.model_label).collect();
    let k = cfg.quality();
    let stride = cfg.data.cluster_stride;
    let cache = cfg.data.cache_dir.as_deref().map(ClusterCache::new).transpose()?;
    let n_max = cfg.eval.sweep.iter().copied().chain([n_votes]).max().expect("non-empty");

    let best = predict_all(model, &clusters_for(&images, n_max, stride, ClusterOrder::Best, &k, cache.as_ref())?)?;
    let preds = best
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (p, &l))| record_from(p[..n_votes.min(p.len())].to_vec(), n_class, i, Some(l)))
        .collect::<remnet_core::Result<Vec<_>>>()?;
    let acc = accuracy(&preds)?;
    let confusion = confusion_matrix(&preds, n_class)?;
    let labeled = |per: Vec<Vec<ClusterPrediction>>| per.into_iter().zip(labels.iter().copied()).collect::<Vec<_>>();
    let sweep = if cfg.eval.sweep.is_empty() { Vec::new() } else { sweep_predictions(&labeled(best), &cfg.eval.sweep, n_class)? };
    let poor = if cfg.eval.poor_quality_sweep && !cfg.eval.sweep.is_empty() {
        let worst = predict_all(model, &clusters_for(&images, n_max, stride, ClusterOrder::Worst, &k, cache.as_ref())?)?;
        Some(sweep_predictions(&labeled(worst), &cfg.eval.sweep, n_class)?)
    } else {
        None
    };
    let (manipulated, weighted) = if cfg.eval.manipulated {
        let m = manipulated_accuracy(cfg, model, &images, &labels, n_votes)?;
        (Some(m), Some(weighted_score(acc, m)?))
    } else {
        (None, None)
    };

    let metrics = Metrics {
        images: preds.len(),
        n_votes,
        accuracy: acc,
        sweep,
        poor_quality_sweep: poor,
        manipulated_accuracy: manipulated,
        weighted_score: weighted,
    };
    create_dir(out)?;
    write_text(&out.join(METRICS_FILE), &toml::to_string(&metrics).expect("metrics serialize"))?;
    write_text(&out.join(CONFUSION_FILE), &format_confusion(&confusion))?;
    let paths: Vec<String> = records.iter().map(|r| r.path.clone()).collect();
    write_text(&out.join(PREDICTIONS_FILE), &format_predictions(&preds, &paths))?;
    if !metrics.sweep.is_empty() {
        write_text(&out.join(SWEEP_FILE), &format_xy("n_votes", "accuracy", &metrics.sweep))?;
    }
    if let Some(p) = &metrics.poor_quality_sweep {
        write_text(&out.join(POOR_SWEEP_FILE), &format_xy("n_votes", "accuracy", p))?;
    }
    Ok(EvalRun { metrics, records: preds, confusion })
}

fn manipulated_accuracy(cfg: &RunConfig, model: &AnyModel, images: &[Arc<Image>], labels: &[usize], n_votes: usize) -> IoResult<f64> {
    let specs = cfg.data.specs()?;
    let k = cfg.quality();
    let per = images
        .par_iter()
        .zip(labels)
        .enumerate()
        .flat_map_iter(|(i, (img, &label))| specs.iter().map(move |&s| (i, img, label, s)))
        .map(|(i, img, label, spec)| {
            let aug = Arc::new(augment(img, spec, &BaselineJpeg)?);
            let ex = select_clusters(i, &aug, n_votes, cfg.data.cluster_stride, ClusterOrder::Best, &k)?;
            let p = ex.clusters.iter().map(|c| predict_cluster(model, c)).collect::<remnet_core::Result<Vec<_>>>()?;
            Ok(record_from(p, model.n_class(), i, Some(label))?)
        })
        .collect::<IoResult<Vec<_>>>()?;
    Ok(accuracy(&per)?)
}

/// Loads a checkpoint and evaluates it.
pub fn run_eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, n_votes: usize, out: &Path) -> IoResult<EvalRun> {
    let (model, _) = checkpoint::load(checkpoint)?;
    evaluate(cfg, &model, manifest, n_votes, out)
}

/// `row  col  quality` for every `window`-sized region on a `stride` grid.
pub fn quality_heatmap(image: &Image, window: usize, stride: usize, k: &QualityConstants) -> IoResult<Vec<(usize, usize, f64)>> {
    let origins = window_origins(image.width(), image.height(), window, stride);
    if origins.is_empty() {
        return Err(IoError::Constraint(format!(
            "no {window}x{window} window with stride {stride} fits a {}x{} image",
            image.width(),
            image.height()
        )));
    }
    origins
        .into_par_iter()
        .map(|(r, c)| Ok((r, c, remnet_core::data::quality_score(&image.crop(r, c, window, window)?, k)?)))
        .collect()
}

