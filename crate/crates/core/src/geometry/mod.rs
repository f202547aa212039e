//! Coordinate frames, projection, voxelization and oriented-box overlap.

mod box3d;
mod frames;
mod iou;
mod nms;
mod projection;
mod voxel;

use std::f64::consts::PI;

use thiserror::Error;

pub use box3d::Box3D;
pub use frames::{camera_label_to_lidar_box, lidar_box_to_camera, CameraBox};
pub use iou::{bev_intersection, bev_iou, iou_3d, polygon_area};
pub use nms::nms_bev;
pub use projection::{
    crop_to_frustum, lidar_to_image, project_box_to_image, project_point, project_voxel_roi,
    ProjectedPoint, Roi,
};
pub use voxel::{decorate, voxelize, DecoratedPoint, Voxel, VoxelGrid, VoxelGridConfig, VoxelIndex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("LiDAR-to-camera transform is singular")]
    SingularTransform,
    #[error("voxel has no points")]
    EmptyVoxel,
    #[error("invalid voxel grid configuration: {0}")]
    InvalidConfig(String),
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let a = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}
