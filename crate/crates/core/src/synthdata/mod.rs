//! Synthetic articulated-puppet data: rendering, occlusion, cropping and
//! dataset files.

pub mod clip;
pub mod crop;
pub mod dataset;
pub mod image;
pub mod occlude;
pub mod puppet;
pub mod render;

pub use crop::{crop_image, crop_sample, crop_sample_occluded, TrainingSample};
pub use dataset::{generate_dataset, load_dataset, DatasetManifest, GenerationConfig, Record};
pub use image::Image;
pub use occlude::{occlude, Occluder, OcclusionConfig};
pub use puppet::{sample_puppet, PuppetParams, PuppetRanges};
pub use render::render_puppet;
