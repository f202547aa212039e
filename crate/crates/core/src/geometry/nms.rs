use super::{bev_iou, Box3D};

/// Greedy non-maximum suppression on footprints. Returns kept indices in
/// descending score order; equal scores keep the lower index first.
pub fn nms_bev(boxes: &[Box3D], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut suppressed = vec![false; boxes.len()];
    let mut kept = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for &j in &order[rank + 1..] {
            if !suppressed[j] && bev_iou(&boxes[i], &boxes[j]) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}
