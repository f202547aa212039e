use nalgebra::{Matrix3x4, Vector4};

use super::{Box3D, VoxelGridConfig, VoxelIndex};
use crate::kitti_io::{Calibration, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    /// Rectified camera z.
    pub depth: f64,
    pub in_image: bool,
}

/// Projects one LiDAR-frame point with a precomputed
/// [`Calibration::lidar_to_pixels`] matrix.
#[inline]
pub fn project_point(m: &Matrix3x4<f64>, calib: &Calibration, p: [f64; 3]) -> ProjectedPoint {
    let y = m * Vector4::new(p[0], p[1], p[2], 1.0);
    let depth = y[2];
    let u = y[0] / depth;
    let v = y[1] / depth;
    let in_image = depth > 0.0
        && u >= 0.0
        && v >= 0.0
        && u < calib.image_width as f64
        && v < calib.image_height as f64;
    ProjectedPoint { u, v, depth, in_image }
}

pub fn lidar_to_image(points: &PointCloud, calib: &Calibration) -> Vec<ProjectedPoint> {
    let m = calib.lidar_to_pixels();
    points
        .points
        .iter()
        .map(|p| project_point(&m, calib, p.xyz()))
        .collect()
}

/// Keeps the points that project inside the image in front of the camera,
/// preserving order.
pub fn crop_to_frustum(points: &PointCloud, calib: &Calibration) -> PointCloud {
    let kept = points
        .points
        .iter()
        .zip(lidar_to_image(points, calib))
        .filter(|(_, pr)| pr.in_image)
        .map(|(p, _)| *p)
        .collect();
    PointCloud::new(kept)
}

/// Axis-aligned image rectangle `[u_min, u_max) × [v_min, v_max)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Roi {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub valid: bool,
}

impl Roi {
    pub const INVALID: Roi = Roi {
        u_min: 0.0,
        v_min: 0.0,
        u_max: 0.0,
        v_max: 0.0,
        valid: false,
    };
}

/// Bounding rectangle of the corners in front of the camera, clipped to the
/// image.
fn bounding_rect(corners: &[[f64; 3]], calib: &Calibration) -> Roi {
    let m = calib.lidar_to_pixels();
    let mut roi = Roi {
        u_min: f64::INFINITY,
        v_min: f64::INFINITY,
        u_max: f64::NEG_INFINITY,
        v_max: f64::NEG_INFINITY,
        valid: false,
    };
    let mut any = false;
    for c in corners {
        let p = project_point(&m, calib, *c);
        if p.depth <= 0.0 {
            continue;
        }
        any = true;
        roi.u_min = roi.u_min.min(p.u);
        roi.v_min = roi.v_min.min(p.v);
        roi.u_max = roi.u_max.max(p.u);
        roi.v_max = roi.v_max.max(p.v);
    }
    if !any {
        return Roi::INVALID;
    }
    let (w, h) = (calib.image_width as f64, calib.image_height as f64);
    roi.u_min = roi.u_min.clamp(0.0, w);
    roi.u_max = roi.u_max.clamp(0.0, w);
    roi.v_min = roi.v_min.clamp(0.0, h);
    roi.v_max = roi.v_max.clamp(0.0, h);
    roi.valid = roi.u_max > roi.u_min && roi.v_max > roi.v_min;
    if roi.valid {
        roi
    } else {
        Roi::INVALID
    }
}

/// Image ROI of a voxel cell: the clipped bounding rectangle of its 8
/// projected corners.
pub fn project_voxel_roi(index: VoxelIndex, cfg: &VoxelGridConfig, calib: &Calibration) -> Roi {
    let (lo, hi) = cfg.cell_bounds(index);
    let mut corners = [[0.0; 3]; 8];
    for (i, c) in corners.iter_mut().enumerate() {
        for axis in 0..3 {
            c[axis] = if i >> axis & 1 == 0 { lo[axis] } else { hi[axis] };
        }
    }
    bounding_rect(&corners, calib)
}

/// `(left, top, right, bottom)` image box of a 3D box, or `None` when it is
/// entirely behind the camera or off-image.
pub fn project_box_to_image(b: &Box3D, calib: &Calibration) -> Option<[f64; 4]> {
    let roi = bounding_rect(&b.corners(), calib);
    roi.valid.then_some([roi.u_min, roi.v_min, roi.u_max, roi.v_max])
}
