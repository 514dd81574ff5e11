//! End-to-end acceptance checks. Prints one `PASS`/`FAIL` line per
//! criterion and exits non-zero if any fails. `ACCEPTANCE_ONLY=6,7` runs a
//! subset.

use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remnet::config::{ModelDescriptor, RunConfig};
use remnet::dataset::{generate, MANIFEST_FILE};
use remnet::pipeline::{evaluate, run_train, EvalRun, TrainRun};
use remnet_core::conv::{conv2d, conv2d_naive};
use remnet_core::data::{quality_score, select_clusters, ClusterOrder, Image, QualityConstants};
use remnet_core::eval::{accuracy, PatchClassifier, predict_clusters, vote, weighted_score, ClusterPrediction, PredictionRecord};
use remnet_core::gradcheck::standard_suite;
use remnet_core::model::{ArchConfig, CascadeModel, NormConfig, RemNet, RemnantBlockConfig, ToyClassifier, ToyConfig};
use remnet_core::nn::{Mode, Session};
use remnet_core::optim::Adam;
use remnet_core::schedule::Decision;
use remnet_core::synth::SynthConfig;
use remnet_core::train::TrainConfig;
use remnet_core::{Real, Tensor};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn random<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect()).unwrap()
}

fn gradients() -> Verdict {
    let t = Instant::now();
    let suite = standard_suite(5, 2024, 1e-4).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let failed: Vec<String> = suite.iter().filter(|e| !e.report.passed()).map(|e| format!("{}#{}", e.op, e.instance)).collect();
    let worst = suite.iter().map(|e| e.report.worst()).fold(0.0, f64::max);
    let ops = suite.iter().filter(|e| e.instance == 0).count();
    verdict(
        failed.is_empty() && secs < 60.0,
        format!("{ops} ops x 5 instances, worst relative error {worst:.2e}, {secs:.1}s, failures {failed:?}"),
    )
}

fn conv_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = Vec::new();
    let mut identical = true;
    for _ in 0..5 {
        let (b, h, w) = (rng.random_range(1..3), rng.random_range(5..20), rng.random_range(5..20));
        let (cin, cout, k, stride) = (rng.random_range(1..8), rng.random_range(1..12), rng.random_range(1..8), rng.random_range(1..4));
        let x: Tensor<f32> = random(&[b, h, w, cin], &mut rng);
        let wt = random(&[k, k, cin, cout], &mut rng);
        let bias = random(&[cout], &mut rng);
        let fast = conv2d(&x, &wt, &bias, stride).unwrap();
        let slow = conv2d_naive(&x, &wt, &bias, stride).unwrap();
        identical &= fast.shape() == slow.shape() && fast.data().iter().zip(slow.data()).all(|(p, q)| p.to_bits() == q.to_bits());
        cases.push(format!("{b}x{h}x{w}x{cin} k{k} s{stride} -> {cout}"));
    }
    verdict(identical, format!("bit-identical on [{}]", cases.join(", ")))
}

fn patch_batch<T: Real>(b: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(&[b, 64, 64, 3], (0..b * 64 * 64 * 3).map(|_| T::from_f64(rng.random::<f64>())).collect()).unwrap()
}

fn architecture() -> Verdict {
    let m = RemNet::<f32>::from_config(&ArchConfig::canonical(10), 0).unwrap();
    let shapes: Vec<Vec<usize>> = m.trace(patch_batch(2, 1), Mode::Train).unwrap().into_iter().map(|s| s.shape).collect();
    let want: Vec<Vec<usize>> = vec![
        vec![64, 64, 3],
        vec![64, 64, 3],
        vec![64, 64, 3],
        vec![32, 32, 64],
        vec![16, 16, 128],
        vec![8, 8, 256],
        vec![4, 4, 512],
        vec![1, 1, 512],
        vec![1, 1, 10],
    ];
    let p = m.predict_proba_in(patch_batch(3, 2), Mode::Train).unwrap();
    let worst = p.data().chunks(10).map(|r| (r.iter().map(|&v| f64::from(v)).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max);
    verdict(shapes == want && worst <= 1e-6, format!("stages {shapes:?}, max |sum p - 1| = {worst:.1e}"))
}

fn linearity() -> Verdict {
    // the canonical remnant stack; the head only serves to fill the
    // running statistics
    let cfg = ArchConfig::canonical(4);
    let mut m = toy_head::<f64>(&cfg.remnant, 3);
    m.train_step(patch_batch(2, 4), &[0, 1], &Adam::with_lr(1e-3)).unwrap();
    let run = |x: Tensor<f64>| {
        let mut s = Session::new(&m.store, Mode::Infer, false);
        let v = s.input(x);
        let h = m.preprocess(&mut s, v).unwrap();
        s.graph.value(h).clone()
    };
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..3 {
        let alpha = rng.random_range(-2.0..3.0);
        let (x, y) = (patch_batch::<f64>(2, 10 + trial), patch_batch::<f64>(2, 20 + trial));
        let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let fm = run(Tensor::new(x.shape(), mix).unwrap());
        let (fx, fy) = (run(x), run(y));
        for ((m, a), b) in fm.data().iter().zip(fx.data()).zip(fy.data()) {
            worst = worst.max((m - (alpha * a + (1.0 - alpha) * b)).abs());
        }
    }
    verdict(worst < 1e-4, format!("canonical remnant stack, 3 affine combinations, max deviation {worst:.1e}"))
}

fn toy_head<T: Real>(blocks: &[RemnantBlockConfig], seed: u64) -> CascadeModel<T, ToyClassifier> {
    let toy = ToyConfig {
        patch_size: 64,
        filters: (8, 16),
        n_class: 4,
    };
    let norm = NormConfig::default();
    CascadeModel::build(blocks, norm, seed, |store, rng| ToyClassifier::new(store, "toy", toy, norm, rng)).unwrap()
}

fn quality() -> Verdict {
    let k = QualityConstants::default();
    let qs = [
        quality_score(&Image::filled(256, 256, [0.0; 3]), &k).unwrap(),
        quality_score(&Image::filled(256, 256, [0.5; 3]), &k).unwrap(),
        quality_score(&Image::from_fn(256, 256, |r, c, _| ((r + c) % 2) as f32), &k).unwrap(),
    ];
    let ok = qs.iter().zip([0.0, 0.7, 0.97]).all(|(q, w)| (q - w).abs() < 1e-9);
    verdict(ok, format!("black {:.12}, mid-gray {:.12}, checkerboard {:.12}", qs[0], qs[1], qs[2]))
}

/// Scenes for the desk dataset: 4 models x 3 devices x 24 scenes.
const DESK_SCENES: usize = 24;

fn desk_config(seed: u64, model: ModelDescriptor, manifest: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        model: Some(model),
        ..RunConfig::default()
    };
    cfg.data.manifest = Some(manifest.to_path_buf());
    cfg.data.train_clusters_per_image = Some(8);
    cfg.train.max_epochs = 12;
    cfg.eval.sweep = vec![1, 5, 20];
    cfg.eval.poor_quality_sweep = false;
    cfg
}

fn train_and_test(cfg: &RunConfig, out: &Path) -> (TrainRun, EvalRun) {
    let manifest = cfg.data.manifest.clone().unwrap();
    let run = run_train(cfg, &manifest, out, &mut |r| {
        eprintln!("    epoch {:>2} lr {:.1e} train {:.4} val {:.4}", r.epoch, r.lr, r.train_loss, r.val_loss)
    })
    .unwrap();
    let replay = RunConfig::load(&out.join("config.toml")).unwrap();
    let ev = evaluate(&replay, &run.model, &out.join("test.tsv"), cfg.eval.n_votes, &out.join("eval")).unwrap();
    (run, ev)
}

fn desk_dataset(dir: &Path) -> (std::path::PathBuf, Duration) {
    let t = Instant::now();
    let ds = dir.join("desk");
    if !ds.join(MANIFEST_FILE).is_file() {
        generate(
            SynthConfig {
                scenes: DESK_SCENES,
                seed: 11,
                ..SynthConfig::default()
            },
            &ds,
        )
        .unwrap();
    }
    (ds.join(MANIFEST_FILE), t.elapsed())
}

fn desk_reproduction(dir: &Path) -> Verdict {
    let (manifest, gen_time) = desk_dataset(dir);
    let mut met = 0;
    let mut lines = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 1..=3 {
        let t = Instant::now();
        let cfg = desk_config(seed, ModelDescriptor::desk(4), &manifest);
        let (run, ev) = train_and_test(&cfg, &dir.join(format!("desk-{seed}")));
        let elapsed = t.elapsed() + gen_time;
        slowest = slowest.max(elapsed);
        met += usize::from(ev.metrics.accuracy >= 90.0);
        lines.push(format!(
            "seed {seed}: {} epochs, sweep {:?}, {:.0}s",
            run.outcome.history.len(),
            ev.metrics.sweep,
            elapsed.as_secs_f64()
        ));
    }
    verdict(
        met >= 2 && slowest <= Duration::from_secs(30 * 60),
        format!("{met}/3 seeds >= 90% at N = 20; {}", lines.join("; ")),
    )
}

fn cascade_benefit(dir: &Path) -> Verdict {
    let (manifest, _) = desk_dataset(dir);
    let mut lower = 0;
    let mut acc = [0.0f64; 2];
    let mut lines = Vec::new();
    for seed in 1..=3 {
        let mut row = Vec::new();
        for (i, blocks) in [false, true].into_iter().enumerate() {
            let mut cfg = desk_config(seed, ModelDescriptor::toy(4, blocks), &manifest);
            cfg.train.max_epochs = 8;
            let (run, ev) = train_and_test(&cfg, &dir.join(format!("toy-{seed}-{blocks}")));
            acc[i] += ev.metrics.accuracy / 3.0;
            row.push((run.outcome.history[4].val_loss, ev.metrics.accuracy));
        }
        lower += usize::from(row[1].0 < row[0].0);
        lines.push(format!(
            "seed {seed}: epoch-5 val {:.4} -> {:.4}, accuracy {:.1}% -> {:.1}%",
            row[0].0, row[1].0, row[0].1, row[1].1
        ));
    }
    verdict(
        lower >= 2 && acc[1] >= acc[0] - 1.0,
        format!("{lower}/3 seeds lower with blocks; mean accuracy {:.1}% -> {:.1}%; {}", acc[0], acc[1], lines.join("; ")),
    )
}

fn pred(label: usize, probs: &[f64]) -> ClusterPrediction {
    ClusterPrediction {
        label,
        mean_probs: probs.to_vec(),
    }
}

/// Softmax over scaled channel means and contrast, so labels follow the
/// patch content.
struct ColorStub;

impl PatchClassifier for ColorStub {
    fn n_class(&self) -> usize {
        4
    }

    fn classify(&self, patches: &[Image]) -> remnet_core::Result<Vec<Vec<f64>>> {
        Ok(patches
            .iter()
            .map(|p| {
                let n = (p.width() * p.height()) as f64;
                let mut f = [0.0f64; 4];
                for px in p.data().chunks_exact(3) {
                    for c in 0..3 {
                        f[c] += f64::from(px[c]) / n;
                    }
                }
                let luma = (f[0] + f[1] + f[2]) / 3.0;
                let contrast = (p.data().iter().map(|&v| (f64::from(v) - luma).powi(2)).sum::<f64>() / (3.0 * n)).sqrt();
                f.iter_mut().take(3).for_each(|v| *v -= luma);
                f[3] = contrast - 0.1;
                let e: Vec<f64> = f.iter().map(|v| (50.0 * v).exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|v| v / z).collect()
            })
            .collect())
    }
}

fn voting() -> Verdict {
    let model = ColorStub;
    // red grows to the right, green downwards, blue is texture
    let image = Arc::new(Image::from_fn(512, 512, |r, c, ch| match ch {
        0 => c as f32 / 511.0,
        1 => r as f32 / 511.0,
        _ => ((r * 7 + c * 13) % 17) as f32 / 34.0,
    }));
    let clusters = select_clusters(0, &image, 20, 64, ClusterOrder::Best, &QualityConstants::default()).unwrap().clusters;
    let reference = predict_clusters(&model, &clusters, 0, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut invariant = true;
    for _ in 0..10 {
        let mut shuffled = clusters.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let rec = predict_clusters(&model, &shuffled, 0, None).unwrap();
        invariant &= rec.final_label == reference.final_label && rec.tally == reference.tally;
    }
    // 10 votes each; class 1 carries more probability mass (10.3 vs 9.7)
    let mut tie: Vec<_> = (0..10).map(|_| pred(1, &[0.28, 0.72])).collect();
    tie.extend((0..10).map(|_| pred(0, &[0.69, 0.31])));
    let by_mass = vote(&tie, 2).unwrap().0;
    let symmetric = vote(&[pred(0, &[0.5, 0.5]), pred(1, &[0.5, 0.5])], 2).unwrap().0;
    verdict(
        invariant && by_mass == 1 && symmetric == 0,
        format!(
            "tally {:?} -> {} under 10 permutations: {invariant}; mass tie -> {by_mass}; exact tie -> {symmetric}",
            reference.tally, reference.final_label
        ),
    )
}

fn scheduler() -> Verdict {
    let cfg = TrainConfig::default();
    let mut s = cfg.scheduler().with_baseline(1.0);
    let mut halvings = Vec::new();
    let mut stop = None;
    for epoch in 1..=100 {
        match s.observe(1.0) {
            Decision::Continue => {}
            Decision::Reduced => halvings.push(epoch),
            Decision::Stop => {
                halvings.push(epoch);
                stop = Some(epoch);
                break;
            }
        }
    }
    let every_two = halvings.iter().enumerate().all(|(i, &e)| e == 2 * (i + 1));
    let ok = every_two && halvings.len() == 14 && stop == Some(28) && s.lr() < 1e-7 && s.lr() * 2.0 >= 1e-7;
    verdict(
        ok,
        format!("halvings at epochs {halvings:?}, stop at {stop:?}, final lr {:.3e}", s.lr()),
    )
}

fn metric_formulas() -> Verdict {
    let rec = |ok: bool| PredictionRecord {
        image_index: 0,
        true_label: Some(0),
        cluster_labels: vec![],
        cluster_probs: vec![],
        tally: vec![],
        final_label: usize::from(!ok),
    };
    let records: Vec<_> = (0..540).map(|i| rec(i < 527)).collect();
    let a = accuracy(&records).unwrap();
    let rounded = (a * 100.0).round() / 100.0;
    let w = weighted_score(100.0, 0.0).unwrap();
    verdict(rounded == 97.59 && w == 70.0, format!("accuracy(527/540) = {a:.6} -> {rounded}; weighted(100, 0) = {w}"))
}

fn determinism(dir: &Path) -> Verdict {
    let ds = dir.join("small");
    generate(
        SynthConfig {
            scenes: 6,
            width: 320,
            height: 320,
            seed: 5,
            ..SynthConfig::default()
        },
        &ds,
    )
    .unwrap();
    let runs: Vec<_> = (0..2)
        .map(|i| {
            let mut cfg = desk_config(17, ModelDescriptor::toy(4, true), &ds.join(MANIFEST_FILE));
            cfg.train.max_epochs = 3;
            cfg.data.clusters_per_image = 4;
            cfg.eval.sweep = vec![1, 4];
            train_and_test(&cfg, &dir.join(format!("det-{i}")))
        })
        .collect();
    let same_history = runs[0].0.outcome.history == runs[1].0.outcome.history;
    let same_metrics = runs[0].1.metrics == runs[1].1.metrics;
    let same_files = ["history.tsv", "best.ckpt", "eval/metrics.toml", "eval/predictions.tsv"]
        .iter()
        .all(|f| std::fs::read(dir.join("det-0").join(f)).unwrap() == std::fs::read(dir.join("det-1").join(f)).unwrap());
    verdict(
        same_history && same_metrics && same_files,
        format!(
            "history equal {same_history}, metrics equal {same_metrics}, output files equal {same_files} (accuracy {:.2}%)",
            runs[0].1.metrics.accuracy
        ),
    )
}

fn main() -> ExitCode {
    remnet::init_threads().unwrap();
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().parse().unwrap()).collect());
    let dir = tempfile::tempdir().unwrap();
    let criteria: [(&str, &dyn Fn() -> Verdict); 11] = [
        ("gradient correctness", &gradients),
        ("conv oracle", &conv_oracle),
        ("architecture conformance", &architecture),
        ("remnant-block linearity", &linearity),
        ("quality metric", &quality),
        ("desk-scale unseen-device accuracy", &|| desk_reproduction(dir.path())),
        ("cascade benefit", &|| cascade_benefit(dir.path())),
        ("voting invariance and tie-break", &voting),
        ("scheduler conformance", &scheduler),
        ("metric formulas", &metric_formulas),
        ("determinism", &|| determinism(dir.path())),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!(
            "{} {n:>2} {name}: {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
