//! Optional on-disk cache of cluster selections.
//!
//! Entries are keyed by the SHA-256 of the decoded pixels together with
//! the selection parameters, and store each cluster's origin, size and
//! quality bit pattern. Pixels are not duplicated: they are views into the
//! image the key was computed from.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use remnet_core::data::{select_clusters, ClusterOrder, ClusterRecord, Extraction, Image, QualityConstants};
use sha2::{Digest, Sha256};

use crate::error::{IoError, IoResult};

#[derive(Debug, Clone)]
pub struct ClusterCache {
    dir: PathBuf,
}

pub fn content_key(image: &Image, count: usize, stride: usize, order: ClusterOrder, k: &QualityConstants) -> String {
    let mut h = Sha256::new();
    h.update((image.width() as u64).to_le_bytes());
    h.update((image.height() as u64).to_le_bytes());
    h.update(image.to_u8());
    for v in [count as u64, stride as u64, order as u64, k.alpha.to_bits(), k.beta.to_bits(), k.gamma.to_bits()] {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

impl ClusterCache {
    pub fn new(dir: &Path) -> IoResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    /// Cached selection when present, else computes and stores it.
    pub fn select(
        &self,
        image_index: usize,
        image: &Arc<Image>,
        count: usize,
        stride: usize,
        order: ClusterOrder,
        k: &QualityConstants,
    ) -> IoResult<Extraction> {
        let path = self.dir.join(format!("{}.tsv", content_key(image, count, stride, order, k)));
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Some(ex) = parse_entry(&text, image_index, image) {
                return Ok(ex);
            }
        }
        let ex = select_clusters(image_index, image, count, stride, order, k)?;
        let mut text = format!("short\t{}\n", u8::from(ex.short));
        for c in &ex.clusters {
            writeln!(text, "{}\t{}\t{}\t{:016x}", c.origin.0, c.origin.1, c.size, c.quality.to_bits()).unwrap();
        }
        // write-then-rename keeps concurrent readers from seeing partial files
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, text).map_err(|e| IoError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| IoError::io(&path, e))?;
        Ok(ex)
    }
}

fn parse_entry(text: &str, image_index: usize, image: &Arc<Image>) -> Option<Extraction> {
    let mut lines = text.lines();
    let short = lines.next()?.strip_prefix("short\t")? == "1";
    let mut clusters = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return None;
        }
        let (row, col, size) = (f[0].parse().ok()?, f[1].parse().ok()?, f[2].parse().ok()?);
        if row + size > image.height() || col + size > image.width() {
            return None;
        }
        clusters.push(ClusterRecord {
            image_index,
            image: Arc::clone(image),
            origin: (row, col),
            size,
            quality: f64::from_bits(u64::from_str_radix(f[3], 16).ok()?),
        });
    }
    Some(Extraction { clusters, short })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cached_selection_equals_fresh() {
        let img = Arc::new(Image::from_fn(320, 300, |r, c, ch| (((r * 7) ^ (c * 13) ^ ch) % 256) as f32 / 255.0));
        let k = QualityConstants::default();
        let dir = tempfile::tempdir().unwrap();
        let cache = ClusterCache::new(dir.path()).unwrap();
        let fresh = select_clusters(4, &img, 3, 32, ClusterOrder::Best, &k).unwrap();
        let first = cache.select(4, &img, 3, 32, ClusterOrder::Best, &k).unwrap();
        let second = cache.select(4, &img, 3, 32, ClusterOrder::Best, &k).unwrap();
        assert_eq!(first, fresh);
        assert_eq!(second, fresh);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
