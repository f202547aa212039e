//! Attaching image evidence to LiDAR data: per point, per voxel, or as raw
//! pixel patches.

mod sample;
mod synthetic;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{
    crop_to_frustum, decorate, project_point, project_voxel_roi, voxelize, GeometryError, VoxelGrid, VoxelGridConfig,
    VoxelIndex,
};
use crate::kitti_io::{Calibration, FeatureMap, Image, PointCloud, RawPoint};
use crate::neural::{
    cast, FeatureStack, FeatureStackCache, Mode, Module, NeuralError, Param, PointGroups, Real, Tensor,
};

pub use sample::{crop_raw_patch, roi_pool, sample_feature, sample_feature_with, Sampling, ROI_GRID};
pub use synthetic::{synthetic_feature_map, SYNTHETIC_CHANNELS};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no point projects into the image")]
    NoVisiblePoints,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

pub type Result<T, E = FusionError> = std::result::Result<T, E>;

/// FC + BN + ReLU layers shrinking image features before concatenation.
#[derive(Clone, Debug)]
pub struct FeatureReducer<T> {
    pub stack: FeatureStack<T>,
}

impl<T: Real> FeatureReducer<T> {
    pub const POINT_FUSION_DIMS: [usize; 3] = [512, 96, 16];
    pub const VOXEL_FUSION_DIMS: [usize; 3] = [512, 128, 64];

    pub fn new<R: Rng + ?Sized>(rng: &mut R, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "a reducer needs at least one layer");
        Self {
            stack: FeatureStack::new(rng, dims),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.stack.dims()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.stack.output_dim()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, FeatureStackCache<T>)> {
        Ok(self.stack.forward(x, mode)?)
    }

    pub fn backward(&mut self, cache: &FeatureStackCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        self.stack.backward(cache, dy)
    }
}

impl<T: Real> Module<T> for FeatureReducer<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param<T>)) {
        self.stack.visit_params(prefix, f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.stack.visit_buffers(prefix, f);
    }
}

/// Voxelized, decorated points inside the camera frustum: the part of point
/// fusion that has no parameters.
#[derive(Clone, Debug)]
pub struct VisiblePoints {
    pub grid: VoxelGrid,
    pub groups: PointGroups,
    /// Decorated points `(N, 7)`, grouped by voxel in grid order.
    pub decorated: Vec<[f64; 7]>,
}

impl VisiblePoints {
    pub fn points(&self) -> impl Iterator<Item = &RawPoint> {
        self.grid.voxels.iter().flat_map(|v| v.points.iter())
    }

    pub fn voxel_indices(&self) -> Vec<VoxelIndex> {
        self.grid.voxels.iter().map(|v| v.index).collect()
    }
}

/// Crops to the frustum, voxelizes and decorates.
pub fn visible_points(cloud: &PointCloud, calib: &Calibration, cfg: &VoxelGridConfig) -> Result<VisiblePoints> {
    let cropped = crop_to_frustum(cloud, calib);
    let grid = voxelize(&cropped, cfg)?;
    if grid.is_empty() {
        return Err(FusionError::NoVisiblePoints);
    }
    let mut decorated = Vec::with_capacity(grid.point_count());
    let mut counts = Vec::with_capacity(grid.len());
    for v in &grid.voxels {
        decorated.extend(decorate(v)?);
        counts.push(v.points.len());
    }
    let groups = PointGroups::from_counts(&counts).expect("voxels are non-empty");
    Ok(VisiblePoints {
        grid,
        groups,
        decorated,
    })
}

/// Image feature of every point, `(N, C)` row-major in [`VisiblePoints`]
/// order.
pub fn sample_point_features(
    points: &VisiblePoints,
    calib: &Calibration,
    map: &FeatureMap,
    sampling: Sampling,
) -> Vec<f64> {
    let m = calib.lidar_to_pixels();
    let mut out = Vec::with_capacity(points.decorated.len() * map.channels);
    for p in points.points() {
        let pr = project_point(&m, calib, p.xyz());
        out.extend(sample_feature_with(map, pr.u, pr.v, sampling));
    }
    out
}

/// Raw `k×k` patch of every point, `(N, 3k²)`.
pub fn sample_point_patches(points: &VisiblePoints, calib: &Calibration, image: &Image, k: usize) -> Vec<f64> {
    let m = calib.lidar_to_pixels();
    let mut out = Vec::with_capacity(points.decorated.len() * 3 * k * k);
    for p in points.points() {
        let pr = project_point(&m, calib, p.xyz());
        out.extend(crop_raw_patch(image, pr.u, pr.v, k));
    }
    out
}

/// Pooled image feature of every voxel, `(K, C)`; voxels whose ROI is
/// invalid get zeros.
pub fn pool_voxel_features(
    voxels: &[VoxelIndex],
    cfg: &VoxelGridConfig,
    calib: &Calibration,
    map: &FeatureMap,
) -> Vec<f64> {
    voxels
        .iter()
        .flat_map(|idx| roi_pool(map, &project_voxel_roi(*idx, cfg, calib)))
        .collect()
}

/// Per-point fused rows: `[decorated point (7) | reduced image feature]`.
#[derive(Clone, Debug)]
pub struct FusedPointSet<T> {
    pub voxels: Vec<VoxelIndex>,
    pub groups: PointGroups,
    pub rows: Tensor<T>,
}

/// Per-voxel fused rows: `[VFE feature | reduced pooled image feature]`.
#[derive(Clone, Debug)]
pub struct FusedVoxelSet<T> {
    pub voxels: Vec<VoxelIndex>,
    pub rows: Tensor<T>,
}

fn to_tensor<T: Real>(rows: usize, cols: usize, data: &[f64]) -> Tensor<T> {
    Tensor::from_vec(&[rows, cols], data.iter().map(|v| cast(*v)).collect())
}

fn check_reducer<T: Real>(reducer: &FeatureReducer<T>, map: &FeatureMap) -> Result<()> {
    if reducer.input_dim() != map.channels {
        return Err(NeuralError::ShapeMismatch(format!(
            "reducer takes {} channels, feature map has {}",
            reducer.input_dim(),
            map.channels
        ))
        .into());
    }
    Ok(())
}

/// Projects every visible point, samples its image feature, reduces it and
/// appends it to the decorated point.
pub fn point_fusion<T: Real>(
    cloud: &PointCloud,
    calib: &Calibration,
    map: &FeatureMap,
    reducer: &mut FeatureReducer<T>,
    cfg: &VoxelGridConfig,
    mode: Mode,
) -> Result<FusedPointSet<T>> {
    check_reducer(reducer, map)?;
    let pts = visible_points(cloud, calib, cfg)?;
    let n = pts.decorated.len();
    let sampled = sample_point_features(&pts, calib, map, Sampling::Bilinear);
    let (reduced, _) = reducer.forward(&to_tensor(n, map.channels, &sampled), mode)?;
    let flat: Vec<f64> = pts.decorated.iter().flatten().copied().collect();
    let rows = Tensor::hcat(&to_tensor(n, 7, &flat), &reduced);
    Ok(FusedPointSet {
        voxels: pts.voxel_indices(),
        groups: pts.groups,
        rows,
    })
}

/// Pools image features over each voxel's projected ROI, reduces them and
/// appends them to the voxel's VFE feature.
pub fn voxel_fusion<T: Real>(
    voxel_features: &Tensor<T>,
    voxels: &[VoxelIndex],
    cfg: &VoxelGridConfig,
    calib: &Calibration,
    map: &FeatureMap,
    reducer: &mut FeatureReducer<T>,
    mode: Mode,
) -> Result<FusedVoxelSet<T>> {
    check_reducer(reducer, map)?;
    if voxel_features.shape().len() != 2 || voxel_features.shape()[0] != voxels.len() {
        return Err(NeuralError::ShapeMismatch(format!(
            "{} voxels but features of shape {:?}",
            voxels.len(),
            voxel_features.shape()
        ))
        .into());
    }
    let pooled = pool_voxel_features(voxels, cfg, calib, map);
    let (reduced, _) = reducer.forward(&to_tensor(voxels.len(), map.channels, &pooled), mode)?;
    Ok(FusedVoxelSet {
        voxels: voxels.to_vec(),
        rows: Tensor::hcat(voxel_features, &reduced),
    })
}
