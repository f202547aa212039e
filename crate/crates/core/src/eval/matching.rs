use super::{Bucket, EvalScene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    /// Matched an object outside the bucket or a `DontCare` region.
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Detection indices by descending score.
    pub order: Vec<usize>,
    /// Outcome per detection, indexed like `EvalScene::dets`.
    pub outcomes: Vec<MatchOutcome>,
    /// Matched ground truth per detection.
    pub matched_gt: Vec<Option<usize>>,
    /// Ground truth admitted by the bucket.
    pub gt_count: usize,
    scores: Vec<f64>,
}

impl MatchResult {
    /// `(score, is_tp)` of counted detections in rank order.
    pub fn ranked<'a>(&'a self) -> impl Iterator<Item = (f64, bool)> + 'a {
        self.order.iter().filter_map(move |&i| match self.outcomes[i] {
            MatchOutcome::Ignored => None,
            o => Some((self.scores[i], o == MatchOutcome::TruePositive)),
        })
    }
}

/// Fraction of `det` covered by `region`.
fn coverage(det: &[f64; 4], region: &[f64; 4]) -> f64 {
    let w = (det[2].min(region[2]) - det[0].max(region[0])).max(0.0);
    let h = (det[3].min(region[3]) - det[1].max(region[1])).max(0.0);
    let area = (det[2] - det[0]) * (det[3] - det[1]);
    if area > 0.0 {
        w * h / area
    } else {
        0.0
    }
}

/// Greedy matching in descending score order. A detection takes the
/// unmatched in-bucket object of highest IoU ≥ `threshold`; failing that, an
/// unmatched out-of-bucket object or a `DontCare` region covering more than
/// half of its 2D box makes it ignored; otherwise it is a false positive.
/// `iou[d][g]` holds the IoU of detection `d` and object `g`.
pub fn match_detections(scene: &EvalScene, iou: &[Vec<f64>], threshold: f64, bucket: Bucket) -> MatchResult {
    let mut order: Vec<usize> = (0..scene.dets.len()).collect();
    order.sort_by(|&a, &b| scene.dets[b].2.total_cmp(&scene.dets[a].2));
    let admitted: Vec<bool> = scene.gts.iter().map(|(_, d)| bucket.admits(*d)).collect();
    let mut taken = vec![false; scene.gts.len()];
    let mut outcomes = vec![MatchOutcome::FalsePositive; scene.dets.len()];
    let mut matched_gt = vec![None; scene.dets.len()];
    for &d in &order {
        let best = |want: bool| {
            (0..scene.gts.len())
                .filter(|&g| admitted[g] == want && !taken[g] && iou[d][g] >= threshold)
                .fold(None, |acc: Option<usize>, g| match acc {
                    Some(b) if iou[d][b] >= iou[d][g] => Some(b),
                    _ => Some(g),
                })
        };
        if let Some(g) = best(true) {
            taken[g] = true;
            outcomes[d] = MatchOutcome::TruePositive;
            matched_gt[d] = Some(g);
        } else if let Some(g) = best(false) {
            taken[g] = true;
            outcomes[d] = MatchOutcome::Ignored;
            matched_gt[d] = Some(g);
        } else if scene.dont_care.iter().any(|r| coverage(&scene.dets[d].1, r) > 0.5) {
            outcomes[d] = MatchOutcome::Ignored;
        }
    }
    MatchResult {
        order,
        outcomes,
        matched_gt,
        gt_count: admitted.iter().filter(|&&a| a).count(),
        scores: scene.dets.iter().map(|d| d.2).collect(),
    }
}
