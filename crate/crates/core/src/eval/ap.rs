use serde::{Deserialize, Serialize};

/// Recall sampling used when averaging precision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// r ∈ {0, 0.1, …, 1}.
    #[default]
    Eleven,
    /// r ∈ {1/40, …, 1}.
    Forty,
}

/// `(recall, precision)` after each ranked detection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
}

impl PrCurve {
    /// Curve of detections ranked by descending score, `true` for a true
    /// positive. With no ground truth the curve is empty.
    pub fn from_ranked(tp: &[bool], gt_count: usize) -> Self {
        if gt_count == 0 {
            return Self::default();
        }
        let mut hits = 0usize;
        let points = tp
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                hits += usize::from(t);
                (hits as f64 / gt_count as f64, hits as f64 / (i + 1) as f64)
            })
            .collect();
        Self { points }
    }
}

/// Mean over the sampled recalls of the best precision reached at that
/// recall or beyond; 0 where the curve never gets there.
pub fn average_precision(curve: &PrCurve, mode: Interpolation) -> f64 {
    let recalls: Vec<f64> = match mode {
        Interpolation::Eleven => (0..=10).map(|i| i as f64 / 10.0).collect(),
        Interpolation::Forty => (1..=40).map(|i| i as f64 / 40.0).collect(),
    };
    // Suffix maxima of precision, scanned once from the end.
    let mut best = vec![0.0; curve.points.len() + 1];
    for i in (0..curve.points.len()).rev() {
        best[i] = f64::max(best[i + 1], curve.points[i].1);
    }
    let n = recalls.len() as f64;
    recalls
        .iter()
        .map(|&r| {
            // Recall is non-decreasing, so the first point at or beyond r
            // starts the admissible suffix.
            let first = curve.points.partition_point(|p| p.0 < r - 1e-12);
            best[first]
        })
        .sum::<f64>()
        / n
}
