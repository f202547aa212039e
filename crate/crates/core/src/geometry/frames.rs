use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix4, Vector4};

use super::{normalize_angle, Box3D, GeometryError};
use crate::kitti_io::{Calibration, GroundTruthObject};

/// Box geometry in the rectified camera frame, as stored in label files.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraBox {
    /// `(h, w, l)`.
    pub dims: [f64; 3],
    /// Bottom center.
    pub location: [f64; 3],
    pub rotation_y: f64,
}

fn rect_to_lidar(calib: &Calibration) -> Result<Matrix4<f64>, GeometryError> {
    let fwd = calib.lidar_to_rect();
    if fwd.fixed_view::<3, 3>(0, 0).determinant().abs() < 1e-12 {
        return Err(GeometryError::SingularTransform);
    }
    fwd.try_inverse().ok_or(GeometryError::SingularTransform)
}

/// Converts a camera-frame label into a LiDAR-frame box centered at its
/// geometric center. LiDAR yaw is `-rotation_y - π/2`.
pub fn camera_label_to_lidar_box(
    gt: &GroundTruthObject,
    calib: &Calibration,
) -> Result<Box3D, GeometryError> {
    let [h, w, l] = gt.dims;
    let [x, y, z] = gt.location;
    let inv = rect_to_lidar(calib)?;
    let c = inv * Vector4::new(x, y - h / 2.0, z, 1.0);
    Ok(Box3D::new([c[0], c[1], c[2]], [l, w, h], -gt.rotation_y - FRAC_PI_2))
}

/// Inverse of [`camera_label_to_lidar_box`].
pub fn lidar_box_to_camera(b: &Box3D, calib: &Calibration) -> Result<CameraBox, GeometryError> {
    // Checked for symmetry with the forward conversion.
    rect_to_lidar(calib)?;
    let [l, w, h] = b.size;
    let c = calib.lidar_to_rect() * Vector4::new(b.center[0], b.center[1], b.center[2], 1.0);
    Ok(CameraBox {
        dims: [h, w, l],
        location: [c[0], c[1] + h / 2.0, c[2]],
        rotation_y: normalize_angle(-b.yaw - FRAC_PI_2),
    })
}
