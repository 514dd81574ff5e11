use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use remnet_core::data::{ClusterRecord, Image, QualityConstants};
use remnet_core::eval::{accuracy, confusion_matrix, predict_cluster, predict_clusters, PatchClassifier, PredictionRecord};
use remnet_core::model::{CascadeModel, NormConfig, ToyClassifier, ToyConfig};
use remnet_core::schedule::{Decision, PlateauScheduler};
use remnet_core::train::{train, StopReason, TrainConfig, TrainOutcome, TrainSample};
use remnet_core::Error;

/// Scores a patch by its mean red value: class `i` gets weight
/// `1 + levels[i] * mean`, normalized.
struct MeanStub {
    levels: Vec<f64>,
}

impl PatchClassifier for MeanStub {
    fn n_class(&self) -> usize {
        self.levels.len()
    }

    fn classify(&self, patches: &[Image]) -> remnet_core::Result<Vec<Vec<f64>>> {
        Ok(patches
            .iter()
            .map(|p| {
                let mean = p.data().iter().step_by(3).map(|&v| f64::from(v)).sum::<f64>() / (p.width() * p.height()) as f64;
                let w: Vec<f64> = self.levels.iter().map(|l| (1.0 + l * mean).max(0.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            })
            .collect())
    }
}

/// One-hot on a class chosen by the red level of the patch.
struct LevelStub {
    n_class: usize,
}

impl PatchClassifier for LevelStub {
    fn n_class(&self) -> usize {
        self.n_class
    }

    fn classify(&self, patches: &[Image]) -> remnet_core::Result<Vec<Vec<f64>>> {
        Ok(patches
            .iter()
            .map(|p| {
                let class = (p.data()[0] * 255.0).round() as usize % self.n_class;
                (0..self.n_class).map(|c| if c == class { 0.9 } else { 0.1 / (self.n_class - 1) as f64 }).collect()
            })
            .collect())
    }
}

fn flat_cluster(index: usize, size: usize, level: u8) -> ClusterRecord {
    let v = f32::from(level) / 255.0;
    ClusterRecord::from_image(index, Arc::new(Image::filled(size, size, [v, v, v])), &QualityConstants::default()).unwrap()
}

#[test]
fn cluster_prediction_averages_its_sixteen_patches() {
    // patch (i, j) of the 4x4 tiling has red level (4i + j) / 16
    let img = Image::from_fn(256, 256, |r, c, ch| if ch == 0 { ((r / 64) * 4 + c / 64) as f32 / 16.0 } else { 0.0 });
    let cluster = ClusterRecord::from_image(0, Arc::new(img), &QualityConstants::default()).unwrap();
    let stub = MeanStub { levels: vec![0.0, 2.0, -0.5] };
    let pred = predict_cluster(&stub, &cluster).unwrap();
    let mut want = [0.0; 3];
    for t in 0..16 {
        let m = t as f64 / 16.0;
        let w = [1.0, 1.0 + 2.0 * m, 1.0 - 0.5 * m];
        let s: f64 = w.iter().sum();
        for k in 0..3 {
            want[k] += w[k] / s / 16.0;
        }
    }
    for (got, w) in pred.mean_probs.iter().zip(want) {
        assert!((got - w).abs() < 1e-6, "{got} vs {w}");
    }
    assert!((pred.mean_probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(pred.label, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn voting_ignores_cluster_order(levels in proptest::collection::vec(0u8..6, 1..25), n_class in 2usize..5, perm_seed in any::<u64>()) {
        let stub = LevelStub { n_class };
        let clusters: Vec<_> = levels.iter().map(|&l| flat_cluster(0, 64, l)).collect();
        let reference = predict_clusters(&stub, &clusters, 0, Some(0)).unwrap();
        let mut counts = vec![0usize; n_class];
        for &l in &levels {
            counts[usize::from(l) % n_class] += 1;
        }
        prop_assert_eq!(&reference.tally, &counts);
        let top = *counts.iter().max().unwrap();
        // equal per-cluster probabilities make every tie a tie in mass too
        prop_assert_eq!(reference.final_label, counts.iter().position(|&c| c == top).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for _ in 0..10 {
            let mut shuffled = clusters.clone();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            let rec = predict_clusters(&stub, &shuffled, 0, Some(0)).unwrap();
            prop_assert_eq!(rec.final_label, reference.final_label);
            prop_assert_eq!(&rec.tally, &reference.tally);
        }
    }

    #[test]
    fn confusion_agrees_with_accuracy(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let records: Vec<_> = pairs
            .iter()
            .map(|&(t, p)| PredictionRecord {
                image_index: 0,
                true_label: Some(t),
                cluster_labels: vec![p],
                cluster_probs: vec![],
                tally: vec![],
                final_label: p,
            })
            .collect();
        let m = confusion_matrix(&records, 4).unwrap();
        let total: usize = m.iter().flatten().sum();
        prop_assert_eq!(total, pairs.len());
        for (t, row) in m.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<usize>(), pairs.iter().filter(|p| p.0 == t).count());
        }
        let correct = pairs.iter().filter(|(t, p)| t == p).count();
        let trace: usize = (0..4).map(|i| m[i][i]).sum();
        prop_assert_eq!(trace, correct);
        prop_assert!((accuracy(&records).unwrap() - 100.0 * correct as f64 / pairs.len() as f64).abs() < 1e-9);
    }
}

/// Losses drawn from a few levels so that repeats (non-improvements) are
/// common.
fn loss_sequence() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec((0u32..6).prop_map(|v| f64::from(v) * 0.25), 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn scheduler_reduces_after_patience_misses(losses in loss_sequence(), patience in 1usize..5, baseline in proptest::option::of(0u32..6)) {
        let (lr0, factor, floor) = (1e-3, 0.5, 1e-5);
        let mut s = PlateauScheduler::new(lr0, factor, patience, floor, 0.0);
        let mut best = None;
        if let Some(b) = baseline {
            s = s.with_baseline(f64::from(b) * 0.25);
            best = Some(f64::from(b) * 0.25);
        }
        let mut misses = 0;
        let mut lr = lr0;
        for &l in &losses {
            let before = s.lr();
            prop_assert_eq!(before, lr);
            let d = s.observe(l);
            prop_assert!(s.lr() <= before);
            if best.is_none_or(|b| l < b) {
                best = Some(l);
                misses = 0;
                prop_assert_eq!(d, Decision::Continue);
                continue;
            }
            misses += 1;
            if misses == patience {
                misses = 0;
                lr *= factor;
                prop_assert_eq!(s.lr(), lr);
                prop_assert_eq!(d, if lr < floor { Decision::Stop } else { Decision::Reduced });
                if lr < floor {
                    break;
                }
            } else {
                prop_assert_eq!(d, Decision::Continue);
            }
        }
    }

    #[test]
    fn flat_loss_stops_after_closed_form_halvings(exp in 2i32..5, gap in 1i32..6, patience in 1usize..4) {
        let lr0 = 10f64.powi(-exp);
        let floor = 10f64.powi(-exp - gap);
        let mut s = PlateauScheduler::new(lr0, 0.5, patience, floor, 0.0).with_baseline(1.0);
        let halvings = (lr0 / floor).log2().floor() as usize + 1;
        let mut epoch = 0;
        loop {
            epoch += 1;
            if s.observe(1.0) == Decision::Stop {
                break;
            }
            prop_assert!(epoch < 1000);
        }
        prop_assert_eq!(s.reductions(), halvings);
        prop_assert_eq!(epoch, halvings * patience);
    }
}

fn toy_samples(n: usize, seed: u64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let base: f32 = rng.random_range(0.2..0.8);
            let mut img = Image::filled(96, 96, [base; 3]);
            if label == 1 {
                img.data_mut().iter_mut().for_each(|v| *v = (*v + rng.random_range(-0.15f32..0.15)).clamp(0.0, 1.0));
            }
            TrainSample {
                cluster: ClusterRecord::from_image(i, Arc::new(img), &QualityConstants::default()).unwrap(),
                label,
            }
        })
        .collect()
}

fn toy_model(seed: u64) -> CascadeModel<f32, ToyClassifier> {
    let toy = ToyConfig {
        patch_size: 64,
        filters: (4, 8),
        n_class: 2,
    };
    let norm = NormConfig::default();
    CascadeModel::build(&[], norm, seed, |store, rng| ToyClassifier::new(store, "toy", toy, norm, rng)).unwrap()
}

fn toy_run(seed: u64) -> (TrainOutcome, CascadeModel<f32, ToyClassifier>) {
    let cfg = TrainConfig {
        batch_size: 8,
        lr_init: 1e-2,
        max_epochs: 5,
        seed,
        ..TrainConfig::default()
    };
    let mut model = toy_model(seed);
    let mut seen = Vec::new();
    let out = train(&mut model, &toy_samples(24, 1), &toy_samples(8, 2), &cfg, &mut |r| seen.push(*r)).unwrap();
    assert_eq!(seen, out.history);
    (out, model)
}

#[test]
fn tiny_training_is_deterministic_and_keeps_the_best_epoch() {
    let (a, model_a) = toy_run(5);
    let (b, model_b) = toy_run(5);
    assert_eq!(a, b);
    assert_eq!(model_a.store, model_b.store);
    assert_eq!(a.stop, StopReason::MaxEpochs);
    assert_eq!(a.history.len(), 5);
    let min = a.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert!(a.history.iter().all(|r| a.best.val_loss <= r.val_loss));
    assert_eq!(a.best.val_loss, min);
    assert_eq!(a.history[a.best.epoch - 1].val_loss, min);
    let (c, _) = toy_run(6);
    assert_ne!(a.history, c.history);
}

#[test]
fn non_finite_loss_is_reported_with_its_epoch() {
    let mut samples = toy_samples(8, 3);
    let mut img = samples[0].cluster.pixels();
    img.data_mut().fill(f32::NAN);
    samples[0].cluster.image = Arc::new(img);
    let cfg = TrainConfig {
        batch_size: 8,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let err = train(&mut toy_model(0), &samples, &toy_samples(4, 4), &cfg, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, step: 0, .. }), "{err:?}");
}
