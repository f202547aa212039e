//! The end-to-end detector: network assembly, anchors and targets, loss,
//! training and inference.

mod anchors;
mod config;
mod data;
mod infer;
mod loss;
mod network;
mod train;

use thiserror::Error;

pub use anchors::{
    assign_targets, decode_residuals, encode_residuals, generate_anchors, AnchorGrid, AnchorLabel, TrainingTargets,
};
pub use config::{AnchorConfig, DetectorConfig, FusionMode, InferConfig, LossConfig, NetworkConfig, TrainConfig};
pub use data::{prepare_input, target_boxes, KittiLayout, Scene};
pub use infer::{infer, postprocess};
pub use loss::{compute_loss, smooth_l1, LossBreakdown};
pub use network::{sigmoid, ForwardCache, Network, NetworkOutput, SceneInput};
pub use train::{train, Detector, EpochStats, TrainReport};

use crate::fusion::FusionError;
use crate::geometry::GeometryError;
use crate::kitti_io::KittiError;
use crate::neural::NeuralError;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("BEV grid {width}×{height} is not divisible by the RPN stride {stride}")]
    IndivisibleGrid { width: usize, height: usize, stride: usize },
    #[error("box sizes must be positive, got {0:?}")]
    NonPositiveSize([f64; 3]),
    #[error("no negative anchors in scene")]
    NoNegatives,
    #[error("loss diverged to {loss} at epoch {epoch}, step {step} (scene {scene})")]
    DivergedLoss { epoch: usize, step: usize, scene: String, loss: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] KittiError),
}

pub type Result<T, E = DetectorError> = std::result::Result<T, E>;
