use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;

use super::{quality_score, Image, QualityConstants};
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const CLUSTER_SIZE: usize = 256;
pub const PATCH_SIZE: usize = 64;

/// A square region of a source image together with its quality score. The
/// pixels are not copied: the record shares the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    /// Index of the source record in the caller's image list.
    pub image_index: usize,
    pub image: Arc<Image>,
    /// `(row, col)` of the top-left pixel.
    pub origin: (usize, usize),
    pub size: usize,
    pub quality: f64,
}

impl ClusterRecord {
    /// Whole image as a single cluster of its own size (must be square).
    pub fn from_image(image_index: usize, image: Arc<Image>, k: &QualityConstants) -> Result<Self> {
        if image.width() != image.height() {
            return Err(invalid("cluster", "cluster images must be square"));
        }
        let quality = quality_score(&image, k)?;
        Ok(Self {
            image_index,
            size: image.width(),
            image,
            origin: (0, 0),
            quality,
        })
    }

    pub fn pixels(&self) -> Image {
        self.image.crop(self.origin.0, self.origin.1, self.size, self.size).expect("cluster inside its image")
    }

    /// `size x size` crop at `(row, col)` relative to the cluster origin.
    pub fn patch(&self, row: usize, col: usize, size: usize) -> Result<Image> {
        if row + size > self.size || col + size > self.size {
            return Err(invalid("patch", alloc::format!("{size}px patch at ({row}, {col}) leaves the cluster")));
        }
        self.image.crop(self.origin.0 + row, self.origin.1 + col, size, size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterOrder {
    /// Highest quality first.
    Best,
    /// Lowest quality first (poor-cluster experiments).
    Worst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub clusters: Vec<ClusterRecord>,
    /// Fewer candidate windows existed than were requested.
    pub short: bool,
}

/// Top-left corners of every `size` window on a `stride` grid, row-major.
pub fn window_origins(width: usize, height: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    if width < size || height < size || stride == 0 {
        return Vec::new();
    }
    let rows = (0..=height - size).step_by(stride);
    rows.flat_map(|r| (0..=width - size).step_by(stride).map(move |c| (r, c))).collect()
}

/// Scores every candidate window and keeps `count` of them in the requested
/// order; ties go to the smaller `(row, col)`.
pub fn select_clusters(
    image_index: usize,
    image: &Arc<Image>,
    count: usize,
    stride: usize,
    order: ClusterOrder,
    k: &QualityConstants,
) -> Result<Extraction> {
    if image.width() < CLUSTER_SIZE || image.height() < CLUSTER_SIZE {
        return Err(Error::ImageTooSmall {
            width: image.width(),
            height: image.height(),
            min: CLUSTER_SIZE,
        });
    }
    if stride == 0 {
        return Err(invalid("extract_top_clusters", "stride must be positive"));
    }
    let mut scored = window_origins(image.width(), image.height(), CLUSTER_SIZE, stride)
        .into_iter()
        .map(|o| {
            let q = quality_score(&image.crop(o.0, o.1, CLUSTER_SIZE, CLUSTER_SIZE)?, k)?;
            Ok((q, o))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        let by_q = match order {
            ClusterOrder::Best => b.0.partial_cmp(&a.0),
            ClusterOrder::Worst => a.0.partial_cmp(&b.0),
        };
        by_q.unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
    });
    let short = scored.len() < count;
    scored.truncate(count);
    Ok(Extraction {
        clusters: scored
            .into_iter()
            .map(|(quality, origin)| ClusterRecord {
                image_index,
                image: Arc::clone(image),
                origin,
                size: CLUSTER_SIZE,
                quality,
            })
            .collect(),
        short,
    })
}

/// The `count` highest-quality 256x256 clusters on a `stride` grid.
pub fn extract_top_clusters(image_index: usize, image: &Arc<Image>, count: usize, stride: usize, k: &QualityConstants) -> Result<Extraction> {
    select_clusters(image_index, image, count, stride, ClusterOrder::Best, k)
}

/// Uniformly random 64x64 patch; returns the patch and its offset inside
/// the cluster.
pub fn random_patch_crop<R: Rng + ?Sized>(cluster: &ClusterRecord, rng: &mut R) -> Result<(Image, (usize, usize))> {
    let span = cluster
        .size
        .checked_sub(PATCH_SIZE)
        .ok_or_else(|| invalid("random_patch_crop", "cluster smaller than a patch"))?;
    let r = rng.random_range(0..=span);
    let c = rng.random_range(0..=span);
    Ok((cluster.patch(r, c, PATCH_SIZE)?, (r, c)))
}

/// The patch at the cluster center, used for deterministic validation.
pub fn center_crop(cluster: &ClusterRecord) -> Result<Image> {
    let off = cluster.size.saturating_sub(PATCH_SIZE) / 2;
    cluster.patch(off, off, PATCH_SIZE)
}

/// Row-major tiling of the cluster into 64x64 patches (16 for 256x256).
pub fn non_overlapping_patches(cluster: &ClusterRecord) -> Result<Vec<Image>> {
    let n = cluster.size / PATCH_SIZE;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(cluster.patch(i * PATCH_SIZE, j * PATCH_SIZE, PATCH_SIZE)?);
        }
    }
    Ok(out)
}

/// `[B, H, W, 3]` batch from equally sized patches.
pub fn patches_to_batch(patches: &[Image]) -> Result<Tensor<f32>> {
    let first = patches.first().ok_or(Error::Empty("patch batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(patches.len() * h * w * 3);
    for p in patches {
        if (p.height(), p.width()) != (h, w) {
            return Err(Error::ShapeMismatch {
                op: "patch batch",
                lhs: alloc::vec![h, w],
                rhs: alloc::vec![p.height(), p.width()],
            });
        }
        data.extend_from_slice(p.data());
    }
    Tensor::new(&[patches.len(), h, w, 3], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize) -> Arc<Image> {
        Arc::new(Image::from_fn(w, h, |r, c, ch| (((r * 7 + c * 13 + ch * 5) % 17) as f32) / 16.0))
    }

    #[test]
    fn single_window_image() {
        let img = textured(256, 256);
        let ex = extract_top_clusters(0, &img, 20, 64, &QualityConstants::default()).unwrap();
        assert_eq!(ex.clusters.len(), 1);
        assert!(ex.short);
        assert_eq!(ex.clusters[0].origin, (0, 0));
        assert_eq!(ex.clusters[0].pixels(), *img);
    }

    #[test]
    fn too_small_rejected() {
        let img = textured(255, 300);
        assert!(matches!(
            extract_top_clusters(0, &img, 20, 64, &QualityConstants::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn textured_region_ranks_first() {
        let img = Arc::new(Image::from_fn(512, 512, |r, c, _| {
            if (128..384).contains(&r) && (192..448).contains(&c) {
                ((r + c) % 2) as f32
            } else {
                0.02
            }
        }));
        let ex = extract_top_clusters(0, &img, 20, 64, &QualityConstants::default()).unwrap();
        assert_eq!(ex.clusters.len(), 20);
        assert!(!ex.short);
        assert_eq!(ex.clusters[0].origin, (128, 192));
    }

    #[test]
    fn patches_tile_cluster() {
        let img = textured(256, 256);
        let cl = ClusterRecord::from_image(0, img.clone(), &QualityConstants::default()).unwrap();
        let ps = non_overlapping_patches(&cl).unwrap();
        assert_eq!(ps.len(), 16);
        assert_eq!(ps[0], img.crop(0, 0, 64, 64).unwrap());
        let rebuilt = Image::from_fn(256, 256, |r, c, ch| ps[(r / 64) * 4 + c / 64].get(r % 64, c % 64, ch));
        assert_eq!(rebuilt, *img);
    }

    #[test]
    fn random_crop_is_seeded_and_in_range() {
        let cl = ClusterRecord::from_image(0, textured(256, 256), &QualityConstants::default()).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let (pa, oa) = random_patch_crop(&cl, &mut a).unwrap();
            let (_, ob) = random_patch_crop(&cl, &mut b).unwrap();
            assert_eq!(oa, ob);
            assert!(oa.0 <= 192 && oa.1 <= 192);
            assert_eq!(pa.width(), 64);
        }
    }
}
