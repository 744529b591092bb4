//! Geometric core and self-training pseudo-label engine for keypoint-based
//! spacecraft pose estimation.
//!
//! - [`geometry`]: quaternions, rigid poses, pinhole projection, model types.
//! - [`heatmap`]: Gaussian keypoint heatmaps, subpixel decoding, adaptive wing loss.
//! - [`pnp`]: three-point solver, seeded RANSAC and Huber refinement.
//! - [`rasterizer`]: z-buffer rendering of part-labeled meshes and the mask losses.
//! - [`selftrain`]: pseudo-label generation and the round orchestrator.
//! - [`metrics`]: rotation/translation errors and the thresholded pose score.

pub mod geometry;
pub mod heatmap;
pub mod metrics;
pub mod model;
pub mod pnp;
pub mod rasterizer;
pub mod selftrain;
