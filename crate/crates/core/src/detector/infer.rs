use super::{decode_residuals, AnchorGrid, InferConfig, Network, NetworkOutput, Result, SceneInput};
use crate::geometry::{nms_bev, Box3D};
use crate::kitti_io::Detection;
use crate::neural::{Mode, Real};

/// Thresholds, decodes and suppresses raw outputs. Boxes come back sorted by
/// descending score.
pub fn postprocess<T: Real>(out: &NetworkOutput<T>, anchors: &AnchorGrid, cfg: &InferConfig) -> Result<Vec<(Box3D, f64)>> {
    let mut boxes = Vec::new();
    let mut scores = Vec::new();
    for i in 0..anchors.len() {
        let s = out.score(i);
        if s >= cfg.score_threshold {
            let b = decode_residuals(&anchors.boxes[i], &out.residuals(i))?;
            // Size residuals of an untrained network can overflow.
            let finite = b.center.iter().chain(&b.size).chain([&b.yaw]).all(|v| v.is_finite());
            if finite && b.size.iter().all(|v| *v > 0.0) {
                boxes.push(b);
                scores.push(s);
            }
        }
    }
    Ok(nms_bev(&boxes, &scores, cfg.nms_iou)
        .into_iter()
        .map(|k| (boxes[k], scores[k]))
        .collect())
}

/// Eval-mode forward pass plus [`postprocess`].
pub fn infer<T: Real>(
    net: &mut Network<T>,
    input: &SceneInput,
    anchors: &AnchorGrid,
    cfg: &InferConfig,
    class_name: &str,
) -> Result<Vec<Detection>> {
    let (out, _) = net.forward(input, Mode::Eval)?;
    Ok(postprocess(&out, anchors, cfg)?
        .into_iter()
        .map(|(box3d, score)| Detection {
            box3d,
            score,
            class_name: class_name.to_string(),
        })
        .collect())
}
