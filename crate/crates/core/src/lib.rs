//! Remnant-block convolutional network for camera model identification.
//!
//! Everything here is pure computation over in-memory data and builds
//! without `std`: a small reverse-mode autodiff engine ([`graph`]), the
//! layers and models built on it ([`nn`], [`model`]), the cluster/patch data
//! pipeline ([`data`]), a synthetic camera simulator ([`synth`]) and the
//! training / voting evaluation loop ([`train`], [`eval`]). Files, codecs and
//! the command line live in the `remnet` crate.

#![no_std]

extern crate alloc;

pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod nn;
pub mod optim;
pub mod param;
pub mod real;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use real::Real;
pub use tensor::Tensor;

/// Mixes several integers into one well-spread seed (splitmix64 finalizer
/// applied per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}
