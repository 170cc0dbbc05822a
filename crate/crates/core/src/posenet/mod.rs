//! Keypoint network: heatmap and offset heads supervise a shared encoder
//! during training, while a regression encoder behind stop-gradient links
//! produces the coordinates and visibilities used at inference.

pub mod config;
pub mod gradcheck;
pub mod infer;
pub mod loss;
pub mod network;
pub mod targets;
pub mod train;

pub use config::{LossWeights, NetworkConfig};
pub use infer::{infer, infer_batch, infer_heatmap, predict_pose, Prediction};
pub use loss::{batch, total_loss, BatchTargets, LossTerms};
pub use network::{Outputs, PoseNet};
pub use targets::{decode_heatmap, heatmap_targets, HeatmapTargets};
pub use train::{evaluate_aligned, predict_aligned, train, EpochStats, TrainConfig, TrainReport};
