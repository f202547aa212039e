use std::path::{Path, PathBuf};

use super::{DetectorConfig, FusionMode, Result, SceneInput};
use crate::fusion::{
    pool_voxel_features, sample_point_features, sample_point_patches, visible_points, FusionError,
};
use crate::geometry::{camera_label_to_lidar_box, Box3D};
use crate::kitti_io::{
    read_calibration, read_image, read_labels, read_point_cloud, read_tensor, Calibration, FeatureMap, GroundTruthObject,
    Image, KittiError, PointCloud,
};

/// Builds the network input for a scene. Only points inside the camera
/// frustum are used, in every fusion mode.
pub fn prepare_input(
    cloud: &PointCloud,
    calib: &Calibration,
    map: Option<&FeatureMap>,
    image: Option<&Image>,
    cfg: &DetectorConfig,
) -> Result<SceneInput> {
    let pts = match visible_points(cloud, calib, &cfg.grid) {
        Ok(p) => p,
        Err(FusionError::NoVisiblePoints) => return Ok(SceneInput::empty(cfg.fusion_mode)),
        Err(e) => return Err(e.into()),
    };
    let mode = cfg.fusion_mode;
    let voxels = pts.voxel_indices();
    let missing = |what: &str| super::DetectorError::Config(format!("{mode} needs {what}"));
    let point_image = match mode {
        FusionMode::PointFusion => {
            let map = map.ok_or_else(|| missing("a feature map"))?;
            Some(sample_point_features(&pts, calib, map, cfg.network.sampling))
        }
        FusionMode::RawPatch3 | FusionMode::RawPatch5 => {
            let image = image.ok_or_else(|| missing("an image"))?;
            Some(sample_point_patches(&pts, calib, image, mode.patch_size().unwrap()))
        }
        _ => None,
    };
    let voxel_image = match mode {
        FusionMode::VoxelFusion => {
            let map = map.ok_or_else(|| missing("a feature map"))?;
            Some(pool_voxel_features(&voxels, &cfg.grid, calib, map))
        }
        _ => None,
    };
    Ok(SceneInput {
        counts: pts.grid.voxels.iter().map(|v| v.points.len()).collect(),
        voxels,
        points: pts.decorated,
        point_image,
        voxel_image,
    })
}

impl SceneInput {
    /// A scene with no visible points, shaped for `mode`.
    pub fn empty(mode: FusionMode) -> Self {
        Self {
            point_image: mode.per_point().then(Vec::new),
            voxel_image: (mode == FusionMode::VoxelFusion).then(Vec::new),
            ..Default::default()
        }
    }
}

/// Labels of `class` in the LiDAR frame whose centers fall inside the grid's
/// x–y range.
pub fn target_boxes(labels: &[GroundTruthObject], calib: &Calibration, cfg: &DetectorConfig) -> Result<Vec<Box3D>> {
    let mut out = Vec::new();
    for l in labels.iter().filter(|l| l.class_name == cfg.target_class) {
        let b = camera_label_to_lidar_box(l, calib)?;
        let inside = (0..2).all(|a| b.center[a] >= cfg.grid.range_min[a] && b.center[a] < cfg.grid.range_max[a]);
        if inside {
            out.push(b);
        }
    }
    Ok(out)
}

/// One prepared scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub id: String,
    pub calib: Calibration,
    pub labels: Vec<GroundTruthObject>,
    pub gt_boxes: Vec<Box3D>,
    pub input: SceneInput,
}

/// File locations in a KITTI-style directory tree.
#[derive(Clone, Debug)]
pub struct KittiLayout {
    pub root: PathBuf,
}

impl KittiLayout {
    pub fn new(root: impl AsRef<Path>) -> Self {
        Self {
            root: root.as_ref().to_path_buf(),
        }
    }

    pub fn velodyne(&self, id: &str) -> PathBuf {
        self.root.join("velodyne").join(format!("{id}.bin"))
    }

    pub fn calib(&self, id: &str) -> PathBuf {
        self.root.join("calib").join(format!("{id}.txt"))
    }

    pub fn label(&self, id: &str) -> PathBuf {
        self.root.join("label_2").join(format!("{id}.txt"))
    }

    pub fn image(&self, id: &str) -> PathBuf {
        self.root.join("image_2").join(format!("{id}.ppm"))
    }

    pub fn features(&self, id: &str) -> PathBuf {
        self.root.join("features").join(format!("{id}.npy"))
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.txt"))
    }

    /// Scene ids listed in `<root>/<name>.txt`, one per line.
    pub fn read_split(&self, name: &str) -> Result<Vec<String>> {
        let path = self.split(name);
        let text = std::fs::read_to_string(&path).map_err(|source| KittiError::Io { path, source })?;
        Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
    }

    /// Loads and prepares one scene. Labels are optional (empty when absent).
    pub fn load_scene(&self, id: &str, cfg: &DetectorConfig) -> Result<Scene> {
        let cloud = read_point_cloud(self.velodyne(id))?;
        let calib = read_calibration(self.calib(id))?;
        let label_path = self.label(id);
        let labels = if label_path.exists() { read_labels(label_path)? } else { Vec::new() };
        let map = match cfg.fusion_mode.needs_feature_map() {
            true => Some(read_tensor(self.features(id), None)?),
            false => None,
        };
        let image = match cfg.fusion_mode.needs_image() {
            true => Some(read_image(self.image(id))?),
            false => None,
        };
        let input = prepare_input(&cloud, &calib, map.as_ref(), image.as_ref(), cfg)?;
        let gt_boxes = target_boxes(&labels, &calib, cfg)?;
        Ok(Scene {
            id: id.to_string(),
            calib,
            labels,
            gt_boxes,
            input,
        })
    }

    pub fn load_split(&self, name: &str, cfg: &DetectorConfig) -> Result<Vec<Scene>> {
        self.read_split(name)?.iter().map(|id| self.load_scene(id, cfg)).collect()
    }
}
