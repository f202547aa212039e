//! Camera/LiDAR fusion for voxel-based 3D object detection.
//!
//! The crate covers the whole desk-scale pipeline: KITTI-style file formats
//! ([`kitti_io`]), frame conversions, voxelization and box overlap
//! ([`geometry`]), a small hand-differentiated network toolkit ([`neural`]),
//! image-feature fusion at point and voxel level ([`fusion`]), the detector
//! itself ([`detector`]) and KITTI-protocol evaluation ([`eval`]).
//! [`synth`] generates seeded toy datasets and [`render`] draws boxes onto
//! images.

pub mod detector;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod kitti_io;
pub mod neural;
pub mod render;
pub mod synth;

pub use geometry::Box3D;
pub use kitti_io::{Calibration, Detection, FeatureMap, GroundTruthObject, Image, PointCloud, RawPoint};
