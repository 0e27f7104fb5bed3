//! Exclusivity-guided crowd instance segmentation numerics.
//!
//! The crate covers the full mathematical core of point-supervised crowd
//! instance mask learning, verifiable at desk scale:
//!
//! - [`geometry`] — pairwise distances, nearest-neighbor exclusion circle
//!   (NNEC) radii, disk regions, positive/negative region partitions.
//! - [`field`] — dense feature fields, separable depthwise Gaussian
//!   smoothing, normalized-coordinate bilinear sampling, and the adjoints
//!   of both (the backward passes used by the analytic loss gradients).
//! - [`losses`] — the discriminative pull/push hinge loss, the background
//!   penalty, the foreground one-point constraint, a finite-difference
//!   gradient oracle, and the EMA teacher update.
//! - [`segment`] — joint embedding/geometric energy fields, thresholded
//!   label assignment, pseudo-mask filtering, and the point-only circle
//!   baseline.
//! - [`edpsam`] — SLIC superpixels and constrained mask construction from
//!   an external candidate-mask provider with NNEC intersection and disk
//!   fallback.
//! - [`eval`] — instance matching, IoU/F1, counting MAE/MSE, and a
//!   density-bucketed timing harness.
//! - [`toy`] — synthetic scenes and a direct embedding-field optimizer
//!   that closes the loss/energy loop end to end.

pub mod edpsam;
pub mod error;
pub mod eval;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod losses;
pub mod segment;
pub mod toy;

pub use error::{Error, ErrorKind, Result};
pub use grid::{Dims, InstanceLabelMap};
