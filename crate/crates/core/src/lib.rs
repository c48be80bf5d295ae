//! Subpopulation analysis over per-instance feature attributions.
//!
//! The engine clusters attribution vectors (optionally after PCA), projects
//! them to 2-D with a class-aware local affine projection seeded by classical
//! MDS, ranks features per subpopulation, and supports interactive partition
//! edits driven by a shared selection.
//!
//! Module map:
//!
//! * [`data`]: attribution matrix, selections, ingestion and export.
//! * [`kernels`]: PCA, classical MDS, histograms, 1-D EMD, Rand index.
//! * [`clustering`]: k-means, medoids and outlier scores.
//! * [`projection`]: control points and the local affine projection.
//! * [`analysis`]: feature rankings, selection statistics, partition edits.
//! * [`pipeline`]: the PCA → k-means → projection → ranking orchestration.
//! * [`bench`]: synthetic lab and experiment harness.

pub mod analysis;
pub mod bench;
pub mod clustering;
pub mod data;
pub mod error;
pub mod kernels;
pub mod pipeline;
pub mod projection;

pub use error::{Error, Result};
