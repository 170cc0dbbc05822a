//! Single-person pose tracking toolkit.
//!
//! A detector-tracker pipeline over a 33-keypoint body topology, a small
//! convolutional network that regresses keypoints while being supervised
//! through heatmap and offset heads, a synthetic articulated-puppet dataset,
//! and PCK evaluation.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by each part of the pipeline.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod posenet;
pub mod scalar;
pub mod synthdata;
pub mod tensor;
pub mod topology;
pub mod tracker;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Geometry and evaluation run in double precision.
pub type Point = geometry::Point2<f64>;
pub type Pose = geometry::Pose<f64>;
pub type Roi = geometry::Roi<f64>;
pub type Detection = geometry::Detection<f64>;
pub type Transform = geometry::SimilarityTransform<f64>;

/// Training and inference run in single precision.
pub type Tensor32 = tensor::Tensor<f32>;

pub type Model32 = posenet::PoseNet<f32>;

/// Gradient verification runs in double precision.
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model64 = posenet::PoseNet<f64>;
