//! KITTI-style average precision for BEV and 3D boxes.

mod ap;
mod matching;
mod table;

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{bev_iou, iou_3d, Box3D};
use crate::kitti_io::{read_labels, GroundTruthObject, KittiError};

pub use ap::{average_precision, Interpolation, PrCurve};
pub use matching::{match_detections, MatchOutcome, MatchResult};
pub use table::{ApRow, ApTable};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("scene mismatch: {0}")]
    SceneMismatch(String),
    #[error(transparent)]
    Io(#[from] KittiError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

/// Difficulty of a ground-truth object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
    Ignored,
}

/// `(min 2D height px, max occlusion, max truncation)` for Easy, Moderate
/// and Hard.
pub const DIFFICULTY_THRESHOLDS: [(f64, i32, f64); 3] = [(40.0, 0, 0.15), (25.0, 1, 0.30), (25.0, 2, 0.50)];

/// Most favorable difficulty whose thresholds all pass.
pub fn bucket(gt: &GroundTruthObject) -> Difficulty {
    let h = gt.bbox_height();
    let levels = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];
    for (level, (min_h, max_occ, max_trunc)) in levels.into_iter().zip(DIFFICULTY_THRESHOLDS) {
        if h >= min_h && gt.occlusion <= max_occ && gt.truncation <= max_trunc {
            return level;
        }
    }
    Difficulty::Ignored
}

/// Columns of the AP table. `All` admits every object of the class,
/// including those too small or occluded for `Hard`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Easy,
    Moderate,
    Hard,
    All,
}

impl Bucket {
    pub const STANDARD: [Bucket; 3] = [Bucket::Easy, Bucket::Moderate, Bucket::Hard];

    pub fn admits(self, d: Difficulty) -> bool {
        match self {
            Bucket::Easy => d == Difficulty::Easy,
            Bucket::Moderate => d <= Difficulty::Moderate,
            Bucket::Hard => d <= Difficulty::Hard,
            Bucket::All => true,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Bucket::Easy => "easy",
            Bucket::Moderate => "moderate",
            Bucket::Hard => "hard",
            Bucket::All => "all",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Bev => "bev",
            Metric::ThreeD => "3d",
        }
    }

    pub fn iou(self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            Metric::Bev => bev_iou(a, b),
            Metric::ThreeD => iou_3d(a, b),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub class_name: String,
    pub metrics: Vec<Metric>,
    pub thresholds: Vec<f64>,
    pub buckets: Vec<Bucket>,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            class_name: "Car".into(),
            metrics: vec![Metric::Bev, Metric::ThreeD],
            thresholds: vec![0.7, 0.8],
            buckets: Bucket::STANDARD.to_vec(),
            interpolation: Interpolation::Eleven,
        }
    }
}

/// Box of a label in a frame rigidly attached to the rectified camera, with
/// z up. IoUs do not depend on the choice of frame, so no calibration is
/// needed.
pub fn label_box(obj: &GroundTruthObject) -> Box3D {
    let [h, w, l] = obj.dims;
    let [x, y, z] = obj.location;
    Box3D::new([z, -x, -(y - h / 2.0)], [l, w, h], -obj.rotation_y - FRAC_PI_2)
}

/// One scene reduced to what matching needs.
#[derive(Clone, Debug, Default)]
pub struct EvalScene {
    /// Ground truth of the evaluated class.
    pub gts: Vec<(Box3D, Difficulty)>,
    /// `DontCare` regions as 2D boxes.
    pub dont_care: Vec<[f64; 4]>,
    /// Detections of the evaluated class: box, 2D box, score.
    pub dets: Vec<(Box3D, [f64; 4], f64)>,
}

impl EvalScene {
    /// Selects the evaluated class from parsed labels and results.
    /// Detections without a score count as score 1.
    pub fn from_labels(gts: &[GroundTruthObject], dets: &[GroundTruthObject], class_name: &str) -> Self {
        Self {
            gts: gts
                .iter()
                .filter(|g| g.class_name == class_name)
                .map(|g| (label_box(g), bucket(g)))
                .collect(),
            dont_care: gts.iter().filter(|g| g.is_dont_care()).map(|g| g.bbox2d).collect(),
            dets: dets
                .iter()
                .filter(|d| d.class_name == class_name)
                .map(|d| (label_box(d), d.bbox2d, d.score.unwrap_or(1.0)))
                .collect(),
        }
    }
}

/// Pools all scenes per (metric, threshold, bucket) and computes AP.
pub fn evaluate(all_dets: &[Vec<GroundTruthObject>], all_gts: &[Vec<GroundTruthObject>], cfg: &EvalConfig) -> Result<ApTable> {
    if all_dets.len() != all_gts.len() {
        return Err(EvalError::SceneMismatch(format!(
            "{} detection lists for {} scenes",
            all_dets.len(),
            all_gts.len()
        )));
    }
    let scenes: Vec<EvalScene> = all_dets
        .iter()
        .zip(all_gts)
        .map(|(d, g)| EvalScene::from_labels(g, d, &cfg.class_name))
        .collect();
    Ok(evaluate_scenes(&scenes, cfg))
}

pub fn evaluate_scenes(scenes: &[EvalScene], cfg: &EvalConfig) -> ApTable {
    let mut rows = Vec::new();
    for &metric in &cfg.metrics {
        // IoU matrices are shared by every threshold and bucket.
        let ious: Vec<Vec<Vec<f64>>> = scenes
            .iter()
            .map(|s| {
                s.dets
                    .iter()
                    .map(|(d, _, _)| s.gts.iter().map(|(g, _)| metric.iou(d, g)).collect())
                    .collect()
            })
            .collect();
        for &threshold in &cfg.thresholds {
            for &bucket in &cfg.buckets {
                let mut ranked = Vec::new();
                let mut gt_count = 0;
                for (s, iou) in scenes.iter().zip(&ious) {
                    let r = match_detections(s, iou, threshold, bucket);
                    gt_count += r.gt_count;
                    ranked.extend(r.ranked());
                }
                // Stable: ties keep scene order, then per-scene rank.
                ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
                let flags: Vec<bool> = ranked.iter().map(|r| r.1).collect();
                let curve = PrCurve::from_ranked(&flags, gt_count);
                rows.push(ApRow {
                    metric,
                    threshold,
                    bucket,
                    ap: average_precision(&curve, cfg.interpolation),
                    gt_count,
                    det_count: flags.len(),
                });
            }
        }
    }
    ApTable { rows }
}

/// Reads `<id>.txt` from both directories for each scene in `ids`, or for
/// every label file in `gt_dir` when `ids` is `None`. A missing result file
/// means no detections; a result file for a scene outside the set is an
/// error.
pub fn evaluate_dirs(gt_dir: &Path, det_dir: &Path, ids: Option<&[String]>, cfg: &EvalConfig) -> Result<ApTable> {
    let list = |dir: &Path| -> Result<Vec<String>> {
        let entries = std::fs::read_dir(dir).map_err(|source| KittiError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .collect();
        ids.sort();
        Ok(ids)
    };
    let gt_ids = match ids {
        Some(given) => {
            let mut v = given.to_vec();
            v.sort();
            v
        }
        None => list(gt_dir)?,
    };
    if let Some(extra) = list(det_dir)?.into_iter().find(|id| gt_ids.binary_search(id).is_err()) {
        return Err(EvalError::SceneMismatch(format!("results for unknown scene {extra}")));
    }
    let mut gts = Vec::with_capacity(gt_ids.len());
    let mut dets = Vec::with_capacity(gt_ids.len());
    for id in &gt_ids {
        gts.push(read_labels(gt_dir.join(format!("{id}.txt")))?);
        let det_path = det_dir.join(format!("{id}.txt"));
        dets.push(if det_path.exists() { read_labels(det_path)? } else { Vec::new() });
    }
    evaluate(&dets, &gts, cfg)
}
