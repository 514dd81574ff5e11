//! Cluster- and image-level prediction with majority voting, and the
//! accuracy metrics.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{non_overlapping_patches, patches_to_batch, select_clusters, ClusterOrder, ClusterRecord, Image, QualityConstants};
use crate::error::{invalid, Error, Result};
use crate::model::{CascadeModel, Head};

/// Anything that turns a set of patches into per-class probabilities.
pub trait PatchClassifier {
    fn n_class(&self) -> usize;
    fn classify(&self, patches: &[Image]) -> Result<Vec<Vec<f64>>>;
}

impl<H: Head<f32>> PatchClassifier for CascadeModel<f32, H> {
    fn n_class(&self) -> usize {
        CascadeModel::n_class(self)
    }

    fn classify(&self, patches: &[Image]) -> Result<Vec<Vec<f64>>> {
        let probs = self.predict_proba(patches_to_batch(patches)?)?;
        let n = CascadeModel::n_class(self);
        Ok(probs.data().chunks_exact(n).map(|r| r.iter().map(|&v| v as f64).collect()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPrediction {
    pub label: usize,
    pub mean_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub image_index: usize,
    pub true_label: Option<usize>,
    pub cluster_labels: Vec<usize>,
    pub cluster_probs: Vec<Vec<f64>>,
    pub tally: Vec<usize>,
    pub final_label: usize,
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Averages the predictions of the non-overlapping 64x64 patches of a
/// cluster.
pub fn predict_cluster<M: PatchClassifier + ?Sized>(model: &M, cluster: &ClusterRecord) -> Result<ClusterPrediction> {
    let patches = non_overlapping_patches(cluster)?;
    let probs = model.classify(&patches)?;
    let mut mean = vec![0.0; model.n_class()];
    for p in &probs {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= probs.len() as f64);
    Ok(ClusterPrediction {
        label: argmax(&mean),
        mean_probs: mean,
    })
}

/// Majority vote over cluster labels. Ties go to the tied class with the
/// largest summed mean probability, then the lowest index. Independent of
/// the order of `preds`.
pub fn vote(preds: &[ClusterPrediction], n_class: usize) -> Result<(usize, Vec<usize>)> {
    if preds.is_empty() {
        return Err(Error::Empty("cluster prediction list"));
    }
    let mut tally = vec![0usize; n_class];
    for p in preds {
        tally[p.label] += 1;
    }
    let top = *tally.iter().max().unwrap();
    let mut winner = None;
    let mut winner_mass = f64::NEG_INFINITY;
    for class in (0..n_class).filter(|&c| tally[c] == top) {
        // sorted summation keeps the result order-independent
        let mut contributions: Vec<f64> = preds.iter().map(|p| p.mean_probs[class]).collect();
        contributions.sort_by(f64::total_cmp);
        let mass: f64 = contributions.iter().sum();
        if mass > winner_mass {
            winner = Some(class);
            winner_mass = mass;
        }
    }
    Ok((winner.unwrap(), tally))
}

/// Predicts every given cluster and votes.
pub fn predict_clusters<M: PatchClassifier + ?Sized>(
    model: &M,
    clusters: &[ClusterRecord],
    image_index: usize,
    true_label: Option<usize>,
) -> Result<PredictionRecord> {
    let preds = clusters.iter().map(|c| predict_cluster(model, c)).collect::<Result<Vec<_>>>()?;
    record_from(preds, model.n_class(), image_index, true_label)
}

/// Votes over `preds` and packages the result.
pub fn record_from(preds: Vec<ClusterPrediction>, n_class: usize, image_index: usize, true_label: Option<usize>) -> Result<PredictionRecord> {
    let (final_label, tally) = vote(&preds, n_class)?;
    Ok(PredictionRecord {
        image_index,
        true_label,
        cluster_labels: preds.iter().map(|p| p.label).collect(),
        cluster_probs: preds.into_iter().map(|p| p.mean_probs).collect(),
        tally,
        final_label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VotingConfig {
    pub n_votes: usize,
    pub stride: usize,
    pub order: ClusterOrder,
    pub quality: QualityConstants,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            n_votes: 20,
            stride: 64,
            order: ClusterOrder::Best,
            quality: QualityConstants::default(),
        }
    }
}

/// Selects the top-N clusters of an image, predicts each, and votes.
pub fn predict_image<M: PatchClassifier + ?Sized>(
    model: &M,
    image: &Arc<Image>,
    image_index: usize,
    true_label: Option<usize>,
    cfg: &VotingConfig,
) -> Result<PredictionRecord> {
    let ex = select_clusters(image_index, image, cfg.n_votes, cfg.stride, cfg.order, &cfg.quality)?;
    if ex.clusters.is_empty() {
        return Err(Error::Empty("cluster selection"));
    }
    predict_clusters(model, &ex.clusters, image_index, true_label)
}

/// `100 * correct / total` over records with ground truth.
pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Empty("prediction records"));
    }
    let mut correct = 0usize;
    for r in records {
        let t = r.true_label.ok_or_else(|| invalid("accuracy", "record without ground truth"))?;
        correct += usize::from(t == r.final_label);
    }
    Ok(correct as f64 / records.len() as f64 * 100.0)
}

/// `0.7 * unaltered + 0.3 * manipulated`, both percentages.
pub fn weighted_score(acc_unaltered: f64, acc_manipulated: f64) -> Result<f64> {
    for a in [acc_unaltered, acc_manipulated] {
        if !(0.0..=100.0).contains(&a) {
            return Err(invalid("weighted_score", alloc::format!("accuracy {a} outside [0, 100]")));
        }
    }
    Ok(0.7 * acc_unaltered + 0.3 * acc_manipulated)
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_matrix(records: &[PredictionRecord], n_class: usize) -> Result<Vec<Vec<usize>>> {
    let mut m = vec![vec![0usize; n_class]; n_class];
    for r in records {
        let t = r.true_label.ok_or_else(|| invalid("confusion_matrix", "record without ground truth"))?;
        if t >= n_class || r.final_label >= n_class {
            return Err(Error::LabelOutOfRange {
                label: t.max(r.final_label),
                n_class,
            });
        }
        m[t][r.final_label] += 1;
    }
    Ok(m)
}

/// Image-level accuracy for each voting number in `n_list`. Each image's
/// clusters are predicted once (for the largest N) and every smaller N votes
/// over the leading clusters of the same ranking, which is what re-running
/// [`predict_image`] per N would select.
pub fn voting_sweep<M: PatchClassifier + ?Sized>(
    model: &M,
    images: &[(Arc<Image>, usize)],
    n_list: &[usize],
    cfg: &VotingConfig,
) -> Result<Vec<(usize, f64)>> {
    let n_max = n_list.iter().copied().max().ok_or(Error::Empty("voting number list"))?;
    let mut per_image = Vec::with_capacity(images.len());
    for (i, (img, _)) in images.iter().enumerate() {
        let ex = select_clusters(i, img, n_max, cfg.stride, cfg.order, &cfg.quality)?;
        let preds = ex.clusters.iter().map(|c| predict_cluster(model, c)).collect::<Result<Vec<_>>>()?;
        per_image.push(preds);
    }
    let labeled: Vec<_> = per_image.into_iter().zip(images).map(|(p, (_, l))| (p, *l)).collect();
    sweep_predictions(&labeled, n_list, model.n_class())
}

/// Accuracy per voting number from precomputed cluster predictions (best
/// first), each image voting with its first `n` clusters.
pub fn sweep_predictions(per_image: &[(Vec<ClusterPrediction>, usize)], n_list: &[usize], n_class: usize) -> Result<Vec<(usize, f64)>> {
    n_list
        .iter()
        .map(|&n| {
            let records = per_image
                .iter()
                .enumerate()
                .map(|(i, (preds, label))| record_from(preds[..n.min(preds.len())].to_vec(), n_class, i, Some(*label)))
                .collect::<Result<Vec<_>>>()?;
            Ok((n, accuracy(&records)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(label: usize, probs: &[f64]) -> ClusterPrediction {
        ClusterPrediction {
            label,
            mean_probs: probs.to_vec(),
        }
    }

    #[test]
    fn majority_and_unanimity() {
        let mut preds: Vec<_> = (0..11).map(|_| pred(0, &[0.6, 0.4])).collect();
        preds.extend((0..9).map(|_| pred(1, &[0.3, 0.7])));
        assert_eq!(vote(&preds, 2).unwrap(), (0, vec![11, 9]));
        let all: Vec<_> = (0..20).map(|_| pred(2, &[0.1, 0.1, 0.8])).collect();
        assert_eq!(vote(&all, 3).unwrap(), (2, vec![0, 0, 20]));
    }

    #[test]
    fn tie_goes_to_probability_mass_then_index() {
        // class 1 mass 7.2, class 0 mass 6.9
        let mut preds: Vec<_> = (0..10).map(|_| pred(1, &[0.28, 0.72])).collect();
        preds.extend((0..10).map(|_| pred(0, &[0.41, 0.0])));
        let mass: [f64; 2] = [preds.iter().map(|p| p.mean_probs[0]).sum(), preds.iter().map(|p| p.mean_probs[1]).sum()];
        assert!((mass[0] - 6.9).abs() < 1e-9 && (mass[1] - 7.2).abs() < 1e-9);
        assert_eq!(vote(&preds, 2).unwrap().0, 1);

        let sym = [pred(0, &[0.5, 0.5]), pred(1, &[0.5, 0.5])];
        assert_eq!(vote(&sym, 2).unwrap().0, 0);
        assert!(vote(&[], 2).is_err());
    }

    fn rec(t: usize, p: usize) -> PredictionRecord {
        PredictionRecord {
            image_index: 0,
            true_label: Some(t),
            cluster_labels: vec![],
            cluster_probs: vec![],
            tally: vec![],
            final_label: p,
        }
    }

    #[test]
    fn accuracy_examples() {
        let mut rs: Vec<_> = (0..527).map(|_| rec(0, 0)).collect();
        rs.extend((0..13).map(|_| rec(0, 1)));
        let a = accuracy(&rs).unwrap();
        assert!((a - 97.592_592_592).abs() < 1e-6);
        assert_eq!(libm::round(a * 100.0) / 100.0, 97.59);
        assert_eq!(accuracy(&[rec(1, 1)]).unwrap(), 100.0);
        assert_eq!(accuracy(&[rec(1, 0)]).unwrap(), 0.0);
        assert!(accuracy(&[]).is_err());
    }

    #[test]
    fn weighted_score_examples() {
        assert_eq!(weighted_score(100.0, 0.0).unwrap(), 70.0);
        assert_eq!(weighted_score(100.0, 100.0).unwrap(), 100.0);
        assert!((weighted_score(96.0, 93.0).unwrap() - 95.1).abs() < 1e-12);
        assert!(weighted_score(101.0, 0.0).is_err());
    }

    #[test]
    fn confusion_consistent_with_accuracy() {
        let rs = [rec(0, 0), rec(0, 1), rec(1, 1), rec(2, 2), rec(2, 0)];
        let m = confusion_matrix(&rs, 3).unwrap();
        assert_eq!(m.iter().map(|r| r.iter().sum::<usize>()).collect::<Vec<_>>(), vec![2, 1, 2]);
        let trace: usize = (0..3).map(|i| m[i][i]).sum();
        assert_eq!(trace as f64 / 5.0, accuracy(&rs).unwrap() / 100.0);
    }
}
