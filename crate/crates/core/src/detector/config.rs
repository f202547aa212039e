use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectorError, Result};
use crate::fusion::Sampling;
use crate::geometry::VoxelGridConfig;

/// Which image evidence, if any, is attached to the LiDAR input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    LidarOnly,
    /// Reduced image feature appended to every decorated point.
    PointFusion,
    /// Reduced ROI-pooled image feature appended to every voxel feature.
    VoxelFusion,
    /// Raw 3×3 RGB patch per point, in place of the feature map.
    RawPatch3,
    /// Raw 5×5 RGB patch per point.
    RawPatch5,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::LidarOnly,
        FusionMode::PointFusion,
        FusionMode::VoxelFusion,
        FusionMode::RawPatch3,
        FusionMode::RawPatch5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::LidarOnly => "lidar_only",
            FusionMode::PointFusion => "point_fusion",
            FusionMode::VoxelFusion => "voxel_fusion",
            FusionMode::RawPatch3 => "raw_patch3",
            FusionMode::RawPatch5 => "raw_patch5",
        }
    }

    pub fn patch_size(self) -> Option<usize> {
        match self {
            FusionMode::RawPatch3 => Some(3),
            FusionMode::RawPatch5 => Some(5),
            _ => None,
        }
    }

    /// Whether each point carries an image vector.
    pub fn per_point(self) -> bool {
        matches!(self, FusionMode::PointFusion | FusionMode::RawPatch3 | FusionMode::RawPatch5)
    }

    pub fn needs_feature_map(self) -> bool {
        matches!(self, FusionMode::PointFusion | FusionMode::VoxelFusion)
    }

    pub fn needs_image(self) -> bool {
        self.patch_size().is_some()
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown fusion mode `{s}`"))
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Channels of the external image feature map.
    pub image_channels: usize,
    pub sampling: Sampling,
    /// Hidden and output widths of the per-point image reducer.
    pub point_reducer: Vec<usize>,
    /// Hidden and output widths of the per-voxel image reducer.
    pub voxel_reducer: Vec<usize>,
    /// Output width of each VFE layer.
    pub vfe: Vec<usize>,
    pub middle_channels: Vec<usize>,
    /// Depth stride of each middle layer; height and width stride 1.
    pub middle_depth_strides: Vec<usize>,
    pub rpn_channels: Vec<usize>,
    pub convs_per_block: usize,
    pub upsample_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            image_channels: 512,
            sampling: Sampling::Bilinear,
            point_reducer: vec![96, 16],
            voxel_reducer: vec![128, 64],
            vfe: vec![32, 64],
            middle_channels: vec![64, 64, 64],
            middle_depth_strides: vec![2, 1, 2],
            rpn_channels: vec![128, 128, 256],
            convs_per_block: 2,
            upsample_channels: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnchorConfig {
    /// `(l, w, h)`.
    pub size: [f64; 3],
    pub z: f64,
    pub yaws: Vec<f64>,
    pub positive_iou: f64,
    pub negative_iou: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            size: [3.9, 1.6, 1.56],
            z: -1.0,
            yaws: vec![0.0, FRAC_PI_2],
            positive_iou: 0.6,
            negative_iou: 0.45,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            beta: 1.0,
            lambda: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Factor applied once `decay_epoch` is reached.
    pub lr_decay: f64,
    pub decay_epoch: usize,
    pub momentum: f64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 160,
            learning_rate: 0.01,
            lr_decay: 0.1,
            decay_epoch: 150,
            momentum: 0.9,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_epoch {
            self.learning_rate
        } else {
            self.learning_rate * self.lr_decay
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.3,
            nms_iou: 0.1,
        }
    }
}

/// Everything needed to build, train and run a detector. The default is the
/// full-size KITTI setup; [`DetectorConfig::toy`] is the desk-scale one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub fusion_mode: FusionMode,
    pub target_class: String,
    /// Seeds weight initialization and scene order.
    pub seed: u64,
    pub grid: VoxelGridConfig,
    pub network: NetworkConfig,
    pub anchors: AnchorConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::full(FusionMode::LidarOnly)
    }
}

impl DetectorConfig {
    /// Full-size layout; point fusion widens the second VFE layer to 128.
    pub fn full(mode: FusionMode) -> Self {
        let mut network = NetworkConfig::default();
        if mode == FusionMode::PointFusion {
            network.vfe = vec![32, 128];
        }
        Self {
            fusion_mode: mode,
            target_class: "Car".into(),
            seed: 0,
            grid: VoxelGridConfig::default(),
            network,
            anchors: AnchorConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            infer: InferConfig::default(),
        }
    }

    /// Desk-scale layout matching the synthetic benchmark: a 32 × 32 × 4
    /// grid of 0.8 m voxels and narrow layers.
    pub fn toy(mode: FusionMode) -> Self {
        Self {
            fusion_mode: mode,
            target_class: "Car".into(),
            seed: 0,
            grid: VoxelGridConfig {
                range_min: [0.0, -12.8, -3.0],
                range_max: [25.6, 12.8, 1.0],
                voxel_size: [0.8, 0.8, 1.0],
                max_points_per_voxel: 35,
                rng_seed: 0,
            },
            network: NetworkConfig {
                image_channels: crate::fusion::SYNTHETIC_CHANNELS,
                sampling: Sampling::Bilinear,
                point_reducer: vec![16, 8],
                voxel_reducer: vec![16, 8],
                vfe: vec![16, 32],
                middle_channels: vec![8, 8, 8],
                middle_depth_strides: vec![2, 2, 1],
                rpn_channels: vec![16, 16, 16],
                convs_per_block: 2,
                upsample_channels: 16,
            },
            anchors: AnchorConfig::default(),
            // Background anchors outnumber cars about a hundredfold and the
            // decoys are only separable through them.
            loss: LossConfig {
                beta: 4.0,
                ..LossConfig::default()
            },
            train: TrainConfig {
                epochs: 30,
                learning_rate: 0.01,
                lr_decay: 0.1,
                decay_epoch: 20,
                momentum: 0.9,
                checkpoint_every: 0,
            },
            infer: InferConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DetectorError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| DetectorError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let n = &self.network;
        let bad = |msg: &str| Err(DetectorError::Config(msg.to_string()));
        if n.vfe.is_empty() || n.vfe.iter().any(|d| *d == 0 || d % 2 == 1) {
            return bad("VFE widths must be positive and even");
        }
        if n.middle_channels.is_empty() || n.middle_channels.len() != n.middle_depth_strides.len() {
            return bad("middle_channels and middle_depth_strides must be non-empty and of equal length");
        }
        if n.middle_depth_strides.contains(&0) {
            return bad("middle strides must be at least 1");
        }
        if n.rpn_channels.is_empty() || n.convs_per_block == 0 || n.upsample_channels == 0 {
            return bad("the RPN needs at least one block with at least one conv");
        }
        if self.fusion_mode.per_point() && n.point_reducer.is_empty() {
            return bad("point fusion needs a point reducer");
        }
        if self.fusion_mode == FusionMode::VoxelFusion && n.voxel_reducer.is_empty() {
            return bad("voxel fusion needs a voxel reducer");
        }
        if self.anchors.yaws.is_empty() || self.anchors.size.iter().any(|s| *s <= 0.0) {
            return bad("anchors need positive sizes and at least one yaw");
        }
        if !(self.anchors.negative_iou <= self.anchors.positive_iou) {
            return bad("negative_iou must not exceed positive_iou");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for mode in FusionMode::ALL {
            let cfg = DetectorConfig::toy(mode);
            let back = DetectorConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = DetectorConfig::from_toml_str("fusion_mode = \"voxel_fusion\"\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.fusion_mode, FusionMode::VoxelFusion);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.grid, VoxelGridConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(DetectorConfig::from_toml_str("fusion = \"x\"\n").is_err());
        assert!(DetectorConfig::from_toml_str("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn schedule() {
        let t = DetectorConfig::toy(FusionMode::LidarOnly).train;
        assert_eq!(t.learning_rate_at(0), 0.01);
        assert_eq!(t.learning_rate_at(19), 0.01);
        assert!((t.learning_rate_at(20) - 0.001).abs() < 1e-15);
        assert!((t.learning_rate_at(29) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn full_size_layouts() {
        assert_eq!(DetectorConfig::full(FusionMode::PointFusion).network.vfe, vec![32, 128]);
        assert_eq!(DetectorConfig::full(FusionMode::VoxelFusion).network.vfe, vec![32, 64]);
    }
}
