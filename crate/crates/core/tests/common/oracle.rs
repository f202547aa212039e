//! Independent reference computations used as test oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfuse::eval::{evaluate, ApTable, Bucket, EvalConfig, Interpolation, Metric};
use voxfuse::geometry::{bev_iou, iou_3d, Box3D};
use voxfuse::kitti_io::GroundTruthObject;

pub type LabelledScene = (Vec<GroundTruthObject>, Vec<GroundTruthObject>);

pub fn object(class: &str, rng: &mut ChaCha8Rng, near: Option<&GroundTruthObject>) -> GroundTruthObject {
    let (location, dims, rotation_y) = match near {
        Some(g) => (
            [
                g.location[0] + rng.random_range(-0.6..0.6),
                g.location[1] + rng.random_range(-0.2..0.2),
                g.location[2] + rng.random_range(-0.6..0.6),
            ],
            g.dims.map(|d| d * rng.random_range(0.85..1.15)),
            g.rotation_y + rng.random_range(-0.3..0.3),
        ),
        None => (
            [rng.random_range(-8.0..8.0), rng.random_range(1.0..2.0), rng.random_range(5.0..30.0)],
            [rng.random_range(1.3..1.7), rng.random_range(1.5..1.9), rng.random_range(3.5..4.5)],
            rng.random_range(-3.1..3.1),
        ),
    };
    let left = rng.random_range(0.0..1000.0);
    let top = rng.random_range(0.0..250.0);
    GroundTruthObject {
        class_name: class.into(),
        truncation: [0.0, 0.1, 0.2, 0.4, 0.7][rng.random_range(0..5)],
        occlusion: rng.random_range(0..4),
        alpha: 0.0,
        bbox2d: [left, top, left + rng.random_range(30.0..150.0), top + rng.random_range(15.0..80.0)],
        dims,
        location,
        rotation_y,
        score: None,
    }
}

/// Up to 5 ground-truth objects and up to 8 detections, most of them near
/// an object.
pub fn random_scene(rng: &mut ChaCha8Rng) -> LabelledScene {
    let mut gts = Vec::new();
    for _ in 0..rng.random_range(0..=5) {
        let class = if rng.random_bool(0.8) { "Car" } else { "Van" };
        gts.push(object(class, rng, None));
    }
    if rng.random_bool(0.3) {
        let mut dc = object("DontCare", rng, None);
        dc.bbox2d = [200.0, 100.0, 500.0, 300.0];
        gts.push(dc);
    }
    let mut dets = Vec::new();
    for _ in 0..rng.random_range(0..=8) {
        let mut d = if !gts.is_empty() && rng.random_bool(0.75) {
            let g = gts[rng.random_range(0..gts.len())].clone();
            object("Car", rng, Some(&g))
        } else {
            object("Car", rng, None)
        };
        if rng.random_bool(0.1) {
            d.class_name = "Pedestrian".into();
        }
        // Distinct scores keep the ranking free of ties.
        d.score = Some(rng.random_range(0.0..1.0));
        dets.push(d);
    }
    (gts, dets)
}

pub fn full_config(interpolation: Interpolation) -> EvalConfig {
    EvalConfig {
        metrics: vec![Metric::Bev, Metric::ThreeD],
        thresholds: vec![0.5, 0.7],
        buckets: vec![Bucket::Easy, Bucket::Moderate, Bucket::Hard, Bucket::All],
        interpolation,
        ..EvalConfig::default()
    }
}

/// Level 0 easy, 1 moderate, 2 hard, 3 none of them.
fn level(g: &GroundTruthObject) -> usize {
    let h = g.bbox2d[3] - g.bbox2d[1];
    let rules = [(40.0, 0, 0.15), (25.0, 1, 0.30), (25.0, 2, 0.50)];
    rules
        .iter()
        .position(|&(min_h, occ, trunc)| h >= min_h && g.occlusion <= occ && g.truncation <= trunc)
        .unwrap_or(3)
}

fn admitted(bucket: Bucket, g: &GroundTruthObject) -> bool {
    match bucket {
        Bucket::Easy => level(g) == 0,
        Bucket::Moderate => level(g) <= 1,
        Bucket::Hard => level(g) <= 2,
        Bucket::All => true,
    }
}

/// Boxes in the camera's (x, z, up) frame. This is a mirror image of the
/// LiDAR frame, which no IoU can tell apart.
fn camera_bev_box(o: &GroundTruthObject) -> Box3D {
    let [h, w, l] = o.dims;
    Box3D::new([o.location[0], o.location[2], -(o.location[1] - h / 2.0)], [l, w, h], -o.rotation_y)
}

/// (TP count, counted detections) for one scene, keeping only detections
/// with score ≥ `cut`.
fn count_at_cut(
    gts: &[GroundTruthObject],
    dets: &[GroundTruthObject],
    metric: Metric,
    threshold: f64,
    bucket: Bucket,
    cut: f64,
) -> (usize, usize) {
    let objs: Vec<&GroundTruthObject> = gts.iter().filter(|g| g.class_name == "Car").collect();
    let mut kept: Vec<&GroundTruthObject> =
        dets.iter().filter(|d| d.class_name == "Car" && d.score.unwrap() >= cut).collect();
    kept.sort_by(|a, b| b.score.unwrap().total_cmp(&a.score.unwrap()));
    let mut used = vec![false; objs.len()];
    let (mut tp, mut counted) = (0, 0);
    for d in kept {
        let db = camera_bev_box(d);
        let overlap = |g: &GroundTruthObject| match metric {
            Metric::Bev => bev_iou(&db, &camera_bev_box(g)),
            Metric::ThreeD => iou_3d(&db, &camera_bev_box(g)),
        };
        let pick = |inside: bool, used: &[bool]| {
            let mut best: Option<(usize, f64)> = None;
            for (i, g) in objs.iter().enumerate() {
                let o = overlap(g);
                if used[i] || admitted(bucket, g) != inside || o < threshold {
                    continue;
                }
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((i, o));
                }
            }
            best.map(|b| b.0)
        };
        if let Some(i) = pick(true, &used) {
            used[i] = true;
            tp += 1;
            counted += 1;
        } else if let Some(i) = pick(false, &used) {
            used[i] = true;
        } else {
            let covered = gts.iter().filter(|g| g.class_name == "DontCare").any(|r| {
                let [l, t, rr, b] = d.bbox2d;
                let iw = (rr.min(r.bbox2d[2]) - l.max(r.bbox2d[0])).max(0.0);
                let ih = (b.min(r.bbox2d[3]) - t.max(r.bbox2d[1])).max(0.0);
                iw * ih > 0.5 * (rr - l) * (b - t)
            });
            if !covered {
                counted += 1;
            }
        }
    }
    (tp, counted)
}

/// Recomputes every cell by sweeping the score cut over each detection's
/// score and recounting from scratch at every cut.
pub fn brute_force(scenes: &[LabelledScene], cfg: &EvalConfig) -> Vec<f64> {
    let mut cuts: Vec<f64> = scenes
        .iter()
        .flat_map(|(_, d)| d.iter().filter(|d| d.class_name == "Car").map(|d| d.score.unwrap()))
        .collect();
    cuts.sort_by(|a, b| b.total_cmp(a));
    let recalls: Vec<f64> = match cfg.interpolation {
        Interpolation::Eleven => (0..=10).map(|i| i as f64 / 10.0).collect(),
        Interpolation::Forty => (1..=40).map(|i| i as f64 / 40.0).collect(),
    };
    let mut out = Vec::new();
    for &metric in &cfg.metrics {
        for &threshold in &cfg.thresholds {
            for &bucket in &cfg.buckets {
                let positives: usize = scenes
                    .iter()
                    .map(|(g, _)| g.iter().filter(|g| g.class_name == "Car" && admitted(bucket, g)).count())
                    .sum();
                if positives == 0 {
                    out.push(0.0);
                    continue;
                }
                let mut pr = Vec::new();
                for &cut in &cuts {
                    let (tp, n) = scenes
                        .iter()
                        .map(|(g, d)| count_at_cut(g, d, metric, threshold, bucket, cut))
                        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
                    if n > 0 {
                        pr.push((tp as f64 / positives as f64, tp as f64 / n as f64));
                    }
                }
                let ap = recalls
                    .iter()
                    .map(|&r| {
                        pr.iter()
                            .filter(|p| p.0 >= r - 1e-12)
                            .map(|p| p.1)
                            .fold(0.0, f64::max)
                    })
                    .sum::<f64>()
                    / recalls.len() as f64;
                out.push(ap);
            }
        }
    }
    out
}

fn aps(table: &ApTable) -> Vec<f64> {
    table.rows.iter().map(|r| r.ap).collect()
}

pub fn run(scenes: &[LabelledScene], cfg: &EvalConfig) -> Vec<f64> {
    let dets: Vec<_> = scenes.iter().map(|s| s.1.clone()).collect();
    let gts: Vec<_> = scenes.iter().map(|s| s.0.clone()).collect();
    aps(&evaluate(&dets, &gts, cfg).unwrap())
}

/// `n` random scenes from `seed`.
pub fn random_scenes(seed: u64, n: usize) -> Vec<LabelledScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_scene(&mut rng)).collect()
}

/// `[lo, hi]` range of `x` where `|a·x + b| ≤ half`, if `a ≠ 0`.
fn slab(a: f64, b: f64, half: f64, range: (f64, f64)) -> (f64, f64) {
    if a.abs() < 1e-15 {
        return if b.abs() <= half { range } else { (1.0, 0.0) };
    }
    let (x0, x1) = ((-half - b) / a, (half - b) / a);
    (range.0.max(x0.min(x1)), range.1.min(x0.max(x1)))
}

/// BEV IoU by counting the cells of a `res`-spaced lattice whose centers
/// lie inside both rectangles, one row at a time.
pub fn raster_bev_iou(a: &Box3D, b: &Box3D, res: f64) -> f64 {
    let reach = |x: &Box3D| 0.5 * x.size[0].hypot(x.size[1]);
    let y_lo = (a.center[1] - reach(a)).max(b.center[1] - reach(b));
    let y_hi = (a.center[1] + reach(a)).min(b.center[1] + reach(b));
    let origin = -1000.0;
    let mut cells = 0i64;
    if y_hi > y_lo {
        let first = ((y_lo - origin) / res).floor() as i64;
        let last = ((y_hi - origin) / res).ceil() as i64;
        for j in first..=last {
            let y = origin + (j as f64 + 0.5) * res;
            let mut span = (f64::NEG_INFINITY, f64::INFINITY);
            for r in [a, b] {
                let (s, c) = r.yaw.sin_cos();
                let dy = y - r.center[1];
                // Along-heading and across-heading coordinates are affine in x.
                span = slab(c, s * dy - c * r.center[0], r.size[0] / 2.0, span);
                span = slab(-s, c * dy + s * r.center[0], r.size[1] / 2.0, span);
            }
            if span.1 >= span.0 {
                let lo = ((span.0 - origin) / res - 0.5).ceil() as i64;
                let hi = ((span.1 - origin) / res - 0.5).floor() as i64;
                cells += (hi - lo + 1).max(0);
            }
        }
    }
    let inter = cells as f64 * res * res;
    inter / (a.size[0] * a.size[1] + b.size[0] * b.size[1] - inter)
}
