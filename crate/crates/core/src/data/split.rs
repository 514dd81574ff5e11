use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::derive_seed;
use crate::error::{Error, Result};

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageRecord {
    pub path: String,
    pub model_label: usize,
    pub device_id: String,
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    /// Fraction of distinct scenes (rounded up, at least one) reserved for
    /// testing.
    pub test_scene_fraction: f64,
    /// Fraction of the remaining train/val pool assigned to validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_scene_fraction: 1.0 / 3.0,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<ImageRecord>,
    pub val: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
    /// Images whose (device, scene) pair would leak across splits.
    pub discarded: Vec<ImageRecord>,
    /// Human-readable constraint failures; empty for a usable split.
    pub violations: Vec<String>,
}

/// Splits so that test devices and test scenes never reach train or
/// validation.
///
/// Per camera model, the last device (by id) is held out for testing. The
/// last `ceil(test_scene_fraction * #scenes)` scenes (by id) form the test
/// scene set. Test images are (held-out device, test scene); the train/val
/// pool is (other devices, other scenes), split per model by a seeded
/// shuffle. Everything else is discarded.
pub fn split_by_device_scene(manifest: &[ImageRecord], cfg: &SplitConfig) -> Result<Split> {
    let mut devices: BTreeMap<usize, BTreeSet<&str>> = BTreeMap::new();
    let mut scenes: BTreeSet<&str> = BTreeSet::new();
    for r in manifest {
        devices.entry(r.model_label).or_default().insert(&r.device_id);
        scenes.insert(&r.scene_id);
    }
    if let Some((model, _)) = devices.iter().find(|(_, d)| d.len() < 2) {
        return Err(Error::Split(alloc::format!(
            "camera model {model} has a single device; it cannot be tested on an unseen device"
        )));
    }
    let test_devices: BTreeMap<usize, &str> = devices.iter().map(|(&m, d)| (m, *d.iter().next_back().unwrap())).collect();
    let n_test_scenes = (libm::ceil(scenes.len() as f64 * cfg.test_scene_fraction) as usize).clamp(1, scenes.len().max(1));
    let test_scenes: BTreeSet<&str> = scenes.iter().rev().take(n_test_scenes).copied().collect();

    let mut out = Split::default();
    let mut pool: BTreeMap<usize, Vec<ImageRecord>> = BTreeMap::new();
    for r in manifest {
        let test_dev = test_devices[&r.model_label] == r.device_id;
        let test_scene = test_scenes.contains(r.scene_id.as_str());
        match (test_dev, test_scene) {
            (true, true) => out.test.push(r.clone()),
            (false, false) => pool.entry(r.model_label).or_default().push(r.clone()),
            _ => out.discarded.push(r.clone()),
        }
    }
    for (&model, dev) in &test_devices {
        if !out.test.iter().any(|r| r.model_label == model) {
            out.violations.push(alloc::format!("model {model}: held-out device {dev} has no image in a test scene"));
        }
        if pool.get(&model).is_none_or(|p| p.is_empty()) {
            out.violations.push(alloc::format!("model {model}: no training images outside the test devices and scenes"));
        }
    }
    if scenes.len() < 2 {
        out.violations.push("fewer than two scenes: test scenes cannot be disjoint from training scenes".into());
    }
    for (model, mut items) in pool {
        items.sort();
        items.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, model as u64])));
        let n_val = libm::round(items.len() as f64 * cfg.val_fraction) as usize;
        let n_val = n_val.min(items.len().saturating_sub(1));
        let train = items.split_off(n_val);
        out.val.extend(items);
        out.train.extend(train);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(model: usize, dev: &str, scene: &str) -> ImageRecord {
        ImageRecord {
            path: alloc::format!("m{model}/{dev}/{scene}.png"),
            model_label: model,
            device_id: dev.into(),
            scene_id: scene.into(),
            width: 512,
            height: 512,
        }
    }

    #[test]
    fn minimal_instance() {
        let m: Vec<_> = ["A", "B"].iter().flat_map(|d| ["s1", "s2"].map(|s| rec(0, d, s))).collect();
        let s = split_by_device_scene(&m, &SplitConfig { val_fraction: 0.0, ..Default::default() }).unwrap();
        assert_eq!(s.test, vec![rec(0, "B", "s2")]);
        assert_eq!(s.train, vec![rec(0, "A", "s1")]);
        assert!(s.violations.is_empty());
        assert_eq!(s.discarded.len(), 2);
    }

    #[test]
    fn single_device_model_rejected() {
        let m = [rec(0, "A", "s1"), rec(0, "B", "s2"), rec(1, "C", "s1")];
        assert!(matches!(split_by_device_scene(&m, &SplitConfig::default()), Err(Error::Split(_))));
    }

    #[test]
    fn unsatisfiable_reports_violation() {
        // test device B never shot a test scene
        let m = [rec(0, "A", "s1"), rec(0, "A", "s2"), rec(0, "B", "s1")];
        let s = split_by_device_scene(&m, &SplitConfig::default()).unwrap();
        assert!(!s.violations.is_empty());
    }
}
