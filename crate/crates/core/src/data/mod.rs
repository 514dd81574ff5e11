//! Cluster/patch data pipeline: quality scoring, cluster selection, patch
//! cropping, augmentation, device/scene-disjoint splitting and the fixed
//! filters used as preprocessing baselines.

mod augment;
mod cluster;
mod filters;
mod image;
mod quality;
mod split;

pub use augment::{augment, bicubic_rescale, gamma_correct, AugmentationSpec, JpegCodec};
pub use cluster::{
    center_crop, extract_top_clusters, non_overlapping_patches, patches_to_batch, random_patch_crop, select_clusters, window_origins,
    ClusterOrder, ClusterRecord, Extraction, CLUSTER_SIZE, PATCH_SIZE,
};
pub use filters::{highpass_filter, median_residual, HIGHPASS_KERNEL};
pub use image::Image;
pub use quality::{quality_score, QualityConstants};
pub use split::{split_by_device_scene, ImageRecord, Split, SplitConfig};
