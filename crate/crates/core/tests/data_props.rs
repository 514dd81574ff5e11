use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use remnet_core::data::{
    augment, gamma_correct, quality_score, random_patch_crop, select_clusters, split_by_device_scene, window_origins, AugmentationSpec,
    ClusterOrder, ClusterRecord, Image, ImageRecord, JpegCodec, QualityConstants, SplitConfig,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

struct NoCodec;

impl JpegCodec for NoCodec {
    fn round_trip(&self, _: &Image, _: u8) -> remnet_core::Result<Image> {
        unreachable!("no JPEG in these tests")
    }
}

fn image_strategy(max: usize) -> impl Strategy<Value = Image> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| proptest::collection::vec(0u8..=255, w * h * 3).prop_map(move |px| Image::from_u8(w, h, &px).unwrap()))
}

/// An image with a random mix of flat and noisy blocks.
fn blocky(width: usize, height: usize, seed: u64) -> Image {
    let mut state = seed | 1;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let blocks: Vec<(u64, f32)> = (0..64).map(|_| (next() % 3, (next() % 256) as f32 / 255.0)).collect();
    Image::from_fn(width, height, |r, c, ch| {
        let (kind, level) = blocks[(r / 64 % 8) * 8 + c / 64 % 8];
        match kind {
            0 => level,
            1 => ((r * 31 + c * 17 + ch * 7) % 256) as f32 / 255.0,
            _ => level * ((r + c) % 2) as f32,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quality_is_in_unit_interval(img in image_strategy(24)) {
        let q = quality_score(&img, &QualityConstants::default()).unwrap();
        prop_assert!((0.0..1.0).contains(&q), "Q = {q}");
    }

    #[test]
    fn no_pattern_beats_the_half_checkerboard(img in image_strategy(16)) {
        let k = QualityConstants::default();
        let board = Image::from_fn(16, 16, |r, c, _| ((r + c) % 2) as f32);
        prop_assert!(quality_score(&img, &k).unwrap() <= quality_score(&board, &k).unwrap() + 1e-12);
    }

    #[test]
    fn none_augmentation_is_identity(img in image_strategy(20)) {
        prop_assert_eq!(augment(&img, AugmentationSpec::None, &NoCodec).unwrap(), img.clone());
        prop_assert_eq!(augment(&img, AugmentationSpec::Gamma(1.0), &NoCodec).unwrap(), img);
    }

    #[test]
    fn gamma_then_inverse_recovers_image(img in image_strategy(20), gamma in prop::sample::select(vec![0.8, 1.2])) {
        let back = gamma_correct(&gamma_correct(&img, gamma), 1.0 / gamma);
        for (a, b) in img.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6, "{a} vs {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn clusters_are_the_best_windows_in_order(seed in any::<u64>(), w in 256usize..480, h in 256usize..480, stride in prop::sample::select(vec![32usize, 64, 96]), count in 1usize..30) {
        let k = QualityConstants::default();
        let img = Arc::new(blocky(w, h, seed));
        let ex = select_clusters(0, &img, count, stride, ClusterOrder::Best, &k).unwrap();
        let origins = window_origins(w, h, 256, stride);
        prop_assert_eq!(ex.clusters.len(), count.min(origins.len()));
        prop_assert_eq!(ex.short, count > origins.len());
        for pair in ex.clusters.windows(2) {
            prop_assert!(pair[0].quality >= pair[1].quality);
        }
        let chosen: BTreeSet<_> = ex.clusters.iter().map(|c| c.origin).collect();
        let worst_kept = ex.clusters.last().unwrap().quality;
        for (r, c) in origins {
            let q = quality_score(&img.crop(r, c, 256, 256).unwrap(), &k).unwrap();
            if chosen.contains(&(r, c)) {
                let rec = ex.clusters.iter().find(|x| x.origin == (r, c)).unwrap();
                prop_assert_eq!(rec.quality, q);
            } else {
                prop_assert!(q <= worst_kept);
            }
        }
        let worst = select_clusters(0, &img, count, stride, ClusterOrder::Worst, &k).unwrap();
        for pair in worst.clusters.windows(2) {
            prop_assert!(pair[0].quality <= pair[1].quality);
        }
    }
}

fn manifest_strategy() -> impl Strategy<Value = Vec<ImageRecord>> {
    // models x devices x scenes presence grid
    (2usize..5, 2usize..4, 2usize..7).prop_flat_map(|(models, devices, scenes)| {
        proptest::collection::vec(prop::bool::weighted(0.85), models * devices * scenes).prop_map(move |keep| {
            let mut out = Vec::new();
            for m in 0..models {
                for d in 0..devices {
                    for s in 0..scenes {
                        if keep[(m * devices + d) * scenes + s] || s == 0 {
                            out.push(ImageRecord {
                                path: format!("m{m}/d{d}/s{s}.png"),
                                model_label: m,
                                device_id: format!("m{m}d{d}"),
                                scene_id: format!("s{s}"),
                                width: 512,
                                height: 512,
                            });
                        }
                    }
                }
            }
            out
        })
    })
}

proptest! {
    #[test]
    fn split_partitions_and_isolates_test_devices(manifest in manifest_strategy(), seed in any::<u64>(), val in 0.0f64..0.5) {
        let split = split_by_device_scene(&manifest, &SplitConfig { test_scene_fraction: 1.0 / 3.0, val_fraction: val, seed }).unwrap();
        let mut all: Vec<_> = split.train.iter().chain(&split.val).chain(&split.test).chain(&split.discarded).cloned().collect();
        all.sort();
        let mut want = manifest.clone();
        want.sort();
        prop_assert_eq!(all, want);
        let test_devices: BTreeSet<_> = split.test.iter().map(|r| &r.device_id).collect();
        let test_scenes: BTreeSet<_> = split.test.iter().map(|r| &r.scene_id).collect();
        for r in split.train.iter().chain(&split.val) {
            prop_assert!(!test_devices.contains(&r.device_id));
            prop_assert!(!test_scenes.contains(&r.scene_id));
        }
        let per_model_test: BTreeSet<_> = split.test.iter().map(|r| (r.model_label, &r.device_id)).collect();
        let models: BTreeSet<_> = split.test.iter().map(|r| r.model_label).collect();
        prop_assert_eq!(per_model_test.len(), models.len());
    }
}

#[test]
fn random_crop_offsets_are_uniform() {
    let img = Arc::new(Image::filled(256, 256, [0.5; 3]));
    let cluster = ClusterRecord::from_image(0, img, &QualityConstants::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let bin = |o: usize| o * 16 / 193;
    let mut counts = [[0u32; 16]; 16];
    for _ in 0..n {
        let (_, (r, c)) = random_patch_crop(&cluster, &mut rng).unwrap();
        assert!(r <= 192 && c <= 192);
        counts[bin(r)][bin(c)] += 1;
    }
    let mut width = [0usize; 16];
    for o in 0..=192 {
        width[bin(o)] += 1;
    }
    let mut chi2 = 0.0;
    for (i, row) in counts.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = n as f64 * (width[i] * width[j]) as f64 / (193.0 * 193.0);
            chi2 += (f64::from(obs) - expected).powi(2) / expected;
        }
    }
    let p = 1.0 - ChiSquared::new(255.0).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi-square {chi2:.1}, p = {p:.2e}");
}
