//! Box wireframes drawn onto camera images.

use nalgebra::Vector4;

use crate::geometry::{bev_iou, project_box_to_image, Box3D};
use crate::kitti_io::{Calibration, Image};

pub const DETECTION_COLOR: [u8; 3] = [0, 255, 0];
pub const GROUND_TRUTH_COLOR: [u8; 3] = [0, 128, 255];
pub const HIGHLIGHT_COLOR: [u8; 3] = [255, 0, 0];

/// Depth below which segments are clipped before projection.
const NEAR: f64 = 0.1;

/// 1 px Bresenham line; pixels outside the image are skipped.
pub fn draw_line(image: &mut Image, from: (i64, i64), to: (i64, i64), color: [u8; 3]) {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as usize) < image.width && (y as usize) < image.height {
            image.set_pixel(x as usize, y as usize, color);
        }
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Axis-aligned rectangle `(left, top, right, bottom)`.
pub fn draw_rect(image: &mut Image, rect: [f64; 4], color: [u8; 3]) {
    let [l, t, r, b] = rect.map(|v| v.round().clamp(-1e6, 1e6) as i64);
    draw_line(image, (l, t), (r, t), color);
    draw_line(image, (r, t), (r, b), color);
    draw_line(image, (r, b), (l, b), color);
    draw_line(image, (l, b), (l, t), color);
}

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Projects the 12 edges of a LiDAR-frame box. Edges are clipped to the
/// region in front of the camera.
pub fn draw_box(image: &mut Image, b: &Box3D, calib: &Calibration, color: [u8; 3]) {
    let to_rect = calib.lidar_to_rect();
    let cam: Vec<Vector4<f64>> = b
        .corners()
        .iter()
        .map(|c| to_rect * Vector4::new(c[0], c[1], c[2], 1.0))
        .collect();
    let pixel = |p: Vector4<f64>| {
        let q = calib.p * p;
        ((q[0] / q[2]).round().clamp(-1e6, 1e6) as i64, (q[1] / q[2]).round().clamp(-1e6, 1e6) as i64)
    };
    for (i, j) in EDGES {
        let (mut a, mut c) = (cam[i], cam[j]);
        if a[2] < NEAR && c[2] < NEAR {
            continue;
        }
        if a[2] < NEAR {
            a = c + (a - c) * ((c[2] - NEAR) / (c[2] - a[2]));
        } else if c[2] < NEAR {
            c = a + (c - a) * ((a[2] - NEAR) / (a[2] - c[2]));
        }
        draw_line(image, pixel(a), pixel(c), color);
    }
}

/// Draws detections and ground truth. Detections are matched greedily by
/// score to ground truth at BEV IoU ≥ `iou_threshold`; unmatched detections
/// and missed objects additionally get a rectangle in the highlight color.
pub fn annotate(
    image: &Image,
    calib: &Calibration,
    detections: &[(Box3D, f64)],
    ground_truth: &[Box3D],
    iou_threshold: f64,
) -> Image {
    let mut out = image.clone();
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].1.total_cmp(&detections[a].1));
    let mut gt_hit = vec![false; ground_truth.len()];
    let mut det_hit = vec![false; detections.len()];
    for &d in &order {
        let best = (0..ground_truth.len())
            .filter(|&g| !gt_hit[g])
            .map(|g| (g, bev_iou(&detections[d].0, &ground_truth[g])))
            .filter(|&(_, iou)| iou >= iou_threshold)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((g, _)) = best {
            gt_hit[g] = true;
            det_hit[d] = true;
        }
    }
    for (g, hit) in ground_truth.iter().zip(&gt_hit) {
        draw_box(&mut out, g, calib, GROUND_TRUTH_COLOR);
        if !hit {
            if let Some(r) = project_box_to_image(g, calib) {
                draw_rect(&mut out, r, HIGHLIGHT_COLOR);
            }
        }
    }
    for ((d, _), hit) in detections.iter().zip(&det_hit) {
        draw_box(&mut out, d, calib, DETECTION_COLOR);
        if !hit {
            if let Some(r) = project_box_to_image(d, calib) {
                draw_rect(&mut out, r, HIGHLIGHT_COLOR);
            }
        }
    }
    out
}
