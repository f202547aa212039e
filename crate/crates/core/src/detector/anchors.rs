use super::{AnchorConfig, DetectorError, Result};
use crate::geometry::{normalize_angle, Box3D, VoxelGridConfig};

/// Anchors tiled over the RPN output lattice: `rows × cols` cells, one anchor
/// per yaw, stored row-major with the yaw index varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub rows: usize,
    pub cols: usize,
    pub yaws: Vec<f64>,
    pub boxes: Vec<Box3D>,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// `(row, col, yaw index)` of anchor `i`.
    pub fn position(&self, i: usize) -> (usize, usize, usize) {
        let k = self.yaws.len();
        let cell = i / k;
        (cell / self.cols, cell % self.cols, i % k)
    }
}

/// Lays anchors on the BEV lattice downsampled by `output_stride`. The grid
/// must divide by `total_stride`, the deepest RPN block's downsampling.
pub fn generate_anchors(
    grid: &VoxelGridConfig,
    cfg: &AnchorConfig,
    output_stride: usize,
    total_stride: usize,
) -> Result<AnchorGrid> {
    grid.validate()?;
    let [nx, ny, _] = grid.grid_dims();
    if nx % total_stride != 0 || ny % total_stride != 0 {
        return Err(DetectorError::IndivisibleGrid {
            width: nx,
            height: ny,
            stride: total_stride,
        });
    }
    let (rows, cols) = (ny / output_stride, nx / output_stride);
    let cell_x = grid.voxel_size[0] * output_stride as f64;
    let cell_y = grid.voxel_size[1] * output_stride as f64;
    let mut boxes = Vec::with_capacity(rows * cols * cfg.yaws.len());
    for r in 0..rows {
        let y = grid.range_min[1] + (r as f64 + 0.5) * cell_y;
        for c in 0..cols {
            let x = grid.range_min[0] + (c as f64 + 0.5) * cell_x;
            for &yaw in &cfg.yaws {
                boxes.push(Box3D::new([x, y, cfg.z], cfg.size, yaw));
            }
        }
    }
    Ok(AnchorGrid {
        rows,
        cols,
        yaws: cfg.yaws.clone(),
        boxes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

/// Per-anchor labels; `residuals[i]` is set exactly for positive anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingTargets {
    pub labels: Vec<AnchorLabel>,
    pub residuals: Vec<Option<[f64; 7]>>,
}

impl TrainingTargets {
    pub fn count(&self, label: AnchorLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }
}

/// `[x_min, y_min, x_max, y_max]` of a box turned to the nearest axis.
fn aligned_footprint(b: &Box3D) -> [f64; 4] {
    let yaw = normalize_angle(b.yaw).abs();
    let along_x = yaw < std::f64::consts::FRAC_PI_4 || yaw > 3.0 * std::f64::consts::FRAC_PI_4;
    let (dx, dy) = if along_x { (b.size[0], b.size[1]) } else { (b.size[1], b.size[0]) };
    let [x, y, _] = b.center;
    [x - dx / 2.0, y - dy / 2.0, x + dx / 2.0, y + dy / 2.0]
}

fn aligned_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Labels anchors against LiDAR-frame ground truth using the IoU of
/// axis-aligned footprints (each box turned to its nearest axis).
///
/// An anchor is positive at IoU ≥ `positive_iou` with some box, or when it is
/// the best anchor of a box (lowest index on ties, and only with non-zero
/// overlap). It is negative when its best IoU is below `negative_iou` and it
/// is not positive; everything else is ignored. A positive anchor regresses
/// towards its highest-IoU box.
pub fn assign_targets(anchors: &AnchorGrid, gts: &[Box3D], cfg: &AnchorConfig) -> TrainingTargets {
    let n = anchors.len();
    let anchor_fp: Vec<[f64; 4]> = anchors.boxes.iter().map(aligned_footprint).collect();
    let gt_fp: Vec<[f64; 4]> = gts.iter().map(aligned_footprint).collect();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![usize::MAX; n];
    let mut labels = vec![AnchorLabel::Negative; n];
    let mut forced: Vec<Option<usize>> = vec![None; n];
    for (g, gfp) in gt_fp.iter().enumerate() {
        let mut argmax = None;
        let mut top = 0.0;
        for (i, afp) in anchor_fp.iter().enumerate() {
            // Cheap reject before the exact overlap.
            if afp[2] <= gfp[0] || gfp[2] <= afp[0] || afp[3] <= gfp[1] || gfp[3] <= afp[1] {
                continue;
            }
            let iou = aligned_iou(afp, gfp);
            if iou > best_iou[i] {
                best_iou[i] = iou;
                best_gt[i] = g;
            }
            if iou > top {
                top = iou;
                argmax = Some(i);
            }
        }
        if let Some(i) = argmax {
            forced[i].get_or_insert(g);
        }
    }
    let mut residuals = vec![None; n];
    for i in 0..n {
        let target = if best_iou[i] >= cfg.positive_iou {
            Some(best_gt[i])
        } else {
            forced[i]
        };
        labels[i] = match target {
            Some(g) => {
                residuals[i] = Some(encode_residuals(&anchors.boxes[i], &gts[g]).expect("anchor and gt sizes are positive"));
                AnchorLabel::Positive
            }
            None if best_iou[i] < cfg.negative_iou => AnchorLabel::Negative,
            None => AnchorLabel::Ignore,
        };
    }
    TrainingTargets { labels, residuals }
}

fn check_size(b: &Box3D) -> Result<()> {
    if b.size.iter().all(|s| *s > 0.0 && s.is_finite()) {
        Ok(())
    } else {
        Err(DetectorError::NonPositiveSize(b.size))
    }
}

/// `(Δx, Δy, Δz, Δl, Δw, Δh, Δθ)` of `gt` relative to `anchor`; x and y are
/// scaled by the anchor's footprint diagonal, z by its height.
pub fn encode_residuals(anchor: &Box3D, gt: &Box3D) -> Result<[f64; 7]> {
    check_size(anchor)?;
    check_size(gt)?;
    let [la, wa, ha] = anchor.size;
    let da = (la * la + wa * wa).sqrt();
    Ok([
        (gt.center[0] - anchor.center[0]) / da,
        (gt.center[1] - anchor.center[1]) / da,
        (gt.center[2] - anchor.center[2]) / ha,
        (gt.size[0] / la).ln(),
        (gt.size[1] / wa).ln(),
        (gt.size[2] / ha).ln(),
        gt.yaw - anchor.yaw,
    ])
}

pub fn decode_residuals(anchor: &Box3D, pred: &[f64; 7]) -> Result<Box3D> {
    check_size(anchor)?;
    let [la, wa, ha] = anchor.size;
    let da = (la * la + wa * wa).sqrt();
    Ok(Box3D::new(
        [
            anchor.center[0] + pred[0] * da,
            anchor.center[1] + pred[1] * da,
            anchor.center[2] + pred[2] * ha,
        ],
        [la * pred[3].exp(), wa * pred[4].exp(), ha * pred[5].exp()],
        anchor.yaw + pred[6],
    ))
}
