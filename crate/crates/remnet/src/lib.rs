//! File formats, image IO, dataset generation and the command-line front
//! end for [`remnet_core`].

pub mod cache;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod report;

pub use error::{IoError, IoResult};

/// Sizes the global thread pool from `REMNET_THREADS` when set.
pub fn init_threads() -> IoResult<()> {
    let Ok(v) = std::env::var("REMNET_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| IoError::Constraint(format!("REMNET_THREADS must be a positive integer, got `{v}`")))?;
    if n == 0 {
        return Err(IoError::Constraint("REMNET_THREADS must be positive".into()));
    }
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
