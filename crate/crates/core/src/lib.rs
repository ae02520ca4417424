//! Microbubble localization pipeline.
//!
//! Synthetic ultrasound frame simulation, a deformable-attention detector
//! trained with a bipartite set-prediction loss, patch-based inference with
//! border deduplication, COCO-style evaluation, and Gaussian super-resolution
//! map rendering. Everything runs on the CPU in double precision.

pub mod config;
pub mod dataset;
pub mod detector;
pub mod evaluation;
pub mod io;
pub mod loss;
pub mod numerics;
pub mod postprocess;
pub mod renderer;
pub mod rng;
pub mod simulator;
pub mod training;

/// Caps the global worker pool. Call once, before any parallel work.
pub fn init_thread_pool(threads: usize) -> Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()
}
