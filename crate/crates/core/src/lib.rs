//! Lifting 2D human keypoints to root-relative 3D poses with joint and bone
//! graph convolutions, joint/bone cross-attention, tree-based feature fusion
//! and a distance-biased transformer encoder.
//!
//! Everything runs on a small double-precision reverse-mode autodiff core in
//! [`autodiff`].

// Index loops mirror the math; negated float comparisons reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gcn;
pub mod gradcheck;
pub mod io;
pub mod model;
pub mod skeleton;
pub mod train;

pub use autodiff::{Adam, Matrix, Tape, Var};
pub use error::{Error, Result};
pub use eval::MetricReport;
pub use model::{loss_mpjpe, ModelConfig, PoseGrafModel};
pub use skeleton::SkeletonTopology;
pub use train::TrainSettings;
