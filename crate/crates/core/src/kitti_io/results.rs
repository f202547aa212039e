use std::fmt::Write as _;
use std::path::Path;

use super::{write_file, Calibration, GroundTruthObject, KittiError, Result};
use crate::geometry::{self, Box3D};

/// A scored box in the LiDAR frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub box3d: Box3D,
    pub score: f64,
    pub class_name: String,
}

/// Detections as label records in the camera frame. Truncation and
/// occlusion are unknown for detections and set to `-1`.
pub fn detections_to_labels(detections: &[Detection], calib: &Calibration) -> Result<Vec<GroundTruthObject>> {
    detections
        .iter()
        .enumerate()
        .map(|(index, det)| {
            if !det.score.is_finite() {
                return Err(KittiError::NonFiniteScore { index });
            }
            let b = &det.box3d;
            if !b.center.iter().chain(&b.size).chain([&b.yaw]).all(|v| v.is_finite()) {
                return Err(KittiError::NonFiniteBox { index });
            }
            let cam = geometry::lidar_box_to_camera(&det.box3d, calib)?;
            let [x, _, z] = cam.location;
            Ok(GroundTruthObject {
                class_name: det.class_name.clone(),
                truncation: -1.0,
                occlusion: -1,
                alpha: geometry::normalize_angle(cam.rotation_y - x.atan2(z)),
                bbox2d: geometry::project_box_to_image(&det.box3d, calib).unwrap_or([0.0; 4]),
                dims: cam.dims,
                location: cam.location,
                rotation_y: cam.rotation_y,
                score: Some(det.score),
            })
        })
        .collect()
}

/// Renders detections in the KITTI result layout: the 15 label fields
/// followed by the score, all with 4 decimals.
pub fn format_detections(detections: &[Detection], calib: &Calibration) -> Result<String> {
    let mut out = String::new();
    for o in detections_to_labels(detections, calib)? {
        let [left, top, right, bottom] = o.bbox2d;
        let [h, w, l] = o.dims;
        let [x, y, z] = o.location;
        writeln!(
            out,
            "{} -1 -1 {:.4} {left:.4} {top:.4} {right:.4} {bottom:.4} {h:.4} {w:.4} {l:.4} \
             {x:.4} {y:.4} {z:.4} {:.4} {:.4}",
            o.class_name,
            o.alpha,
            o.rotation_y,
            o.score.unwrap_or(1.0)
        )
        .unwrap();
    }
    Ok(out)
}

pub fn write_detections(
    path: impl AsRef<Path>,
    detections: &[Detection],
    calib: &Calibration,
) -> Result<()> {
    let text = format_detections(detections, calib)?;
    write_file(path.as_ref(), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitti_io::parse_calibration;

    fn calib() -> Calibration {
        parse_calibration(
            "P2: 700 0 600 0 0 700 180 0 0 0 1 0
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 0 -1 0 0 0 0 -1 -0.08 1 0 0 -0.27
",
        )
        .unwrap()
    }

    #[test]
    fn empty_list_is_empty_text() {
        assert_eq!(format_detections(&[], &calib()).unwrap(), "");
    }

    #[test]
    fn single_line_layout() {
        let det = Detection {
            box3d: Box3D::new([15.0, 1.0, -0.9], [3.9, 1.6, 1.56], 0.2),
            score: 0.9,
            class_name: "Car".into(),
        };
        let text = format_detections(&[det], &calib()).unwrap();
        let line = text.lines().next().unwrap();
        assert_eq!(line.split_whitespace().count(), 16);
        assert!(line.ends_with(" 0.9000"), "{line}");
        assert!(line.starts_with("Car -1 -1 "));
    }

    #[test]
    fn rejects_nan_score() {
        let det = Detection {
            box3d: Box3D::new([15.0, 1.0, -0.9], [3.9, 1.6, 1.56], 0.2),
            score: f64::NAN,
            class_name: "Car".into(),
        };
        assert!(matches!(
            format_detections(&[det], &calib()),
            Err(KittiError::NonFiniteScore { index: 0 })
        ));
    }
}
