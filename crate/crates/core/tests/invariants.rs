mod common;

use std::collections::HashSet;

use nalgebra::Vector4;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfuse::detector::{Detector, DetectorConfig, FusionMode};
use voxfuse::fusion::{point_fusion, roi_pool, sample_feature, visible_points, voxel_fusion, FeatureReducer};
use voxfuse::geometry::{
    bev_iou, nms_bev, project_point, project_voxel_roi, voxelize, Box3D, Roi, VoxelGridConfig,
};
use voxfuse::kitti_io::{FeatureMap, PointCloud, RawPoint};
use voxfuse::neural::{BatchNorm, BnLayout, FeatureStack, Mode, PointGroups, Tensor, VfeLayer};
use voxfuse::synth::{generate_scene, SynthConfig, SynthScene};

fn arb_box(center: f64) -> impl Strategy<Value = Box3D> {
    (
        -center..center,
        -center..center,
        0.5..4.0f64,
        0.5..4.0f64,
        -std::f64::consts::PI..std::f64::consts::PI,
    )
        .prop_map(|(x, y, l, w, yaw)| Box3D::new([x, y, -1.0], [l, w, 1.5], yaw))
}

fn small_grid() -> VoxelGridConfig {
    VoxelGridConfig {
        range_min: [0.0, -4.0, -3.0],
        range_max: [8.0, 4.0, 1.0],
        voxel_size: [0.4, 0.4, 0.5],
        max_points_per_voxel: 10_000,
        rng_seed: 0,
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                RawPoint::new(
                    rng.random_range(-1.0..9.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-3.5..1.5),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect(),
    )
}

fn in_range(cfg: &VoxelGridConfig, p: &RawPoint) -> bool {
    (0..3).all(|a| p.xyz()[a] >= cfg.range_min[a] && p.xyz()[a] < cfg.range_max[a])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn voxelization_partitions_the_cropped_cloud(seed in 0u64..10_000, n in 0usize..400) {
        let cfg = small_grid();
        let cloud = random_cloud(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let grid = voxelize(&cloud, &cfg).unwrap();
        let inside = cloud.points.iter().filter(|p| in_range(&cfg, p)).count();
        prop_assert_eq!(grid.point_count(), inside);
        for (p, a) in cloud.points.iter().zip(&grid.assignment) {
            let holders = grid.voxels.iter().filter(|v| v.points.contains(p)).count();
            prop_assert_eq!(holders, usize::from(in_range(&cfg, p)));
            prop_assert_eq!(a.is_some(), in_range(&cfg, p));
            if let Some(k) = a {
                prop_assert!(grid.voxels[*k].points.contains(p));
            }
        }
    }

    #[test]
    fn voxel_index_round_trips_through_cell_bounds(seed in 0u64..10_000) {
        let cfg = small_grid();
        let cloud = random_cloud(&mut ChaCha8Rng::seed_from_u64(seed), 300);
        let grid = voxelize(&cloud, &cfg).unwrap();
        for v in &grid.voxels {
            let (lo, hi) = cfg.cell_bounds(v.index);
            for p in &v.points {
                let xyz = p.xyz();
                for a in 0..3 {
                    prop_assert!(xyz[a] >= lo[a] - 1e-9 && xyz[a] < hi[a] + 1e-9);
                }
                prop_assert_eq!(cfg.index_of(xyz), Some(v.index));
            }
        }
    }

    #[test]
    fn bev_iou_is_symmetric_and_rigid(
        a in arb_box(5.0),
        b in arb_box(5.0),
        dx in -50.0..50.0f64,
        dy in -50.0..50.0f64,
        theta in -std::f64::consts::PI..std::f64::consts::PI,
    ) {
        let ab = bev_iou(&a, &b);
        prop_assert!((ab - bev_iou(&b, &a)).abs() < 1e-12);
        prop_assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-12);
        let (s, c) = theta.sin_cos();
        let moved = |x: &Box3D| {
            let [px, py, pz] = x.center;
            Box3D::new([c * px - s * py + dx, s * px + c * py + dy, pz], x.size, x.yaw + theta)
        };
        prop_assert!((bev_iou(&moved(&a), &moved(&b)) - ab).abs() < 1e-9);
    }

    #[test]
    fn nms_keeps_separated_boxes_in_score_order(
        boxes in prop::collection::vec(arb_box(6.0), 0..30),
        seed in 0u64..1000,
        threshold in 0.05..0.9f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = boxes.iter().map(|_| rng.random_range(0.0..1.0)).collect();
        let kept = nms_bev(&boxes, &scores, threshold);
        for w in kept.windows(2) {
            prop_assert!(scores[w[0]] >= scores[w[1]]);
        }
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                prop_assert!(bev_iou(&boxes[a], &boxes[b]) < threshold);
            }
        }
    }

    #[test]
    fn projection_ignores_homogeneous_scale(
        x in 1.0..60.0f64,
        y in -20.0..20.0f64,
        z in -3.0..2.0f64,
        scale in prop_oneof![0.001..0.5f64, 2.0..1000.0f64],
    ) {
        let calib = voxfuse::synth::synthetic_calibration(&SynthConfig::default());
        let m = calib.lidar_to_pixels();
        let p = project_point(&m, &calib, [x, y, z]);
        let q = m * (Vector4::new(x, y, z, 1.0) * scale);
        prop_assert!((q[0] / q[2] - p.u).abs() <= 1e-9 * p.u.abs().max(1.0));
        prop_assert!((q[1] / q[2] - p.v).abs() <= 1e-9 * p.v.abs().max(1.0));
    }
}

#[test]
fn bev_iou_agrees_with_rasterization() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let box_of = |rng: &mut ChaCha8Rng| {
        Box3D::new(
            [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0],
            [rng.random_range(0.5..4.0), rng.random_range(0.5..4.0), 1.0],
            rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        )
    };
    let mut worst = 0.0f64;
    let mut overlapping = 0;
    for _ in 0..1000 {
        // Half the pairs share a neighborhood so that overlaps are common.
        let a = box_of(&mut rng);
        let mut b = box_of(&mut rng);
        if rng.random_bool(0.5) {
            b.center[0] = a.center[0] + rng.random_range(-1.5..1.5);
            b.center[1] = a.center[1] + rng.random_range(-1.5..1.5);
        }
        let oracle = common::oracle::raster_bev_iou(&a, &b, 1e-3);
        let got = bev_iou(&a, &b);
        overlapping += usize::from(got > 0.0);
        worst = worst.max((oracle - got).abs());
    }
    assert!(overlapping > 300, "only {overlapping} overlapping pairs");
    assert!(worst <= 2e-3, "worst |Δ| = {worst}");
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

#[test]
fn vfe_summary_ignores_point_order_within_voxels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let counts: Vec<usize> = (0..6).map(|_| rng.random_range(1..=7)).collect();
        let groups = PointGroups::from_counts(&counts).unwrap();
        let x = random_tensor(&mut rng, &[groups.rows(), 9], 2.0);
        let mut permuted = x.clone();
        for k in 0..groups.len() {
            let range = groups.range(k);
            let mut rows: Vec<usize> = range.clone().collect();
            rows.shuffle(&mut rng);
            for (dst, src) in range.zip(rows) {
                permuted.row_mut(dst).copy_from_slice(x.row(src));
            }
        }
        let layer = VfeLayer::<f64>::new(&mut rng, 9, 16);
        for mode in [Mode::Train, Mode::Eval] {
            let (_, a, _) = layer.clone().forward(&x, &groups, mode).unwrap();
            let (_, b, _) = layer.clone().forward(&permuted, &groups, mode).unwrap();
            for (p, q) in a.data.iter().zip(&b.data) {
                assert!((p - q).abs() <= 1e-12, "trial {trial} {mode:?}: {p} vs {q}");
            }
        }
    }
}

#[test]
fn eval_forward_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut stack = FeatureStack::<f32>::new(&mut rng, &[12, 20, 8]);
    let x = random_tensor(&mut rng, &[50, 12], 1.0).cast::<f32>();
    let (a, _) = stack.forward(&x, Mode::Eval).unwrap();
    let (b, _) = stack.forward(&x, Mode::Eval).unwrap();
    assert_eq!(a.data, b.data);

    for mode in FusionMode::ALL {
        let cfg = DetectorConfig::toy(mode);
        let (input, _) = common::synth_scene_input(&cfg, 4);
        let mut det = Detector::<f32>::new(cfg).unwrap();
        let (a, _) = det.network.forward(&input, Mode::Eval).unwrap();
        let (b, _) = det.network.forward(&input, Mode::Eval).unwrap();
        assert_eq!(a.score_logits.data, b.score_logits.data, "{mode}");
        assert_eq!(a.regression.data, b.regression.data, "{mode}");
    }
}

#[test]
fn batch_norm_train_output_is_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // With eps = 1e-5 the output variance is σ²/(σ² + eps); a batch spread
    // of σ² ≈ 300 keeps that within 1e-6 of one.
    for layout in [BnLayout::Rows, BnLayout::ChannelMajor] {
        let shape: &[usize] = match layout {
            BnLayout::Rows => &[200, 5],
            BnLayout::ChannelMajor => &[5, 8, 25],
        };
        let mut x = random_tensor(&mut rng, shape, 30.0);
        x.data.iter_mut().for_each(|v| *v += 7.0);
        let mut bn = BatchNorm::<f64>::new(5);
        let (y, _) = bn.forward(&x, layout, Mode::Train).unwrap();
        for c in 0..5 {
            let vals: Vec<f64> = match layout {
                BnLayout::Rows => (0..200).map(|i| y.data[i * 5 + c]).collect(),
                BnLayout::ChannelMajor => y.data[c * 200..(c + 1) * 200].to_vec(),
            };
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "{layout:?} channel {c}: mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "{layout:?} channel {c}: var {var}");
        }
    }
}

fn full_scene(index: u64) -> SynthScene {
    let cfg = SynthConfig {
        feature_channels: 512,
        ..SynthConfig::default()
    };
    generate_scene(&cfg, index).unwrap()
}

#[test]
fn fused_rows_have_the_configured_widths() {
    let s = full_scene(0);
    let grid = DetectorConfig::default().grid;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut point_reducer = FeatureReducer::<f32>::new(&mut rng, &FeatureReducer::<f32>::POINT_FUSION_DIMS);
    let fused = point_fusion(&s.cloud, &s.calib, &s.features, &mut point_reducer, &grid, Mode::Eval).unwrap();
    assert_eq!(fused.rows.shape()[1], 23);
    assert_eq!(fused.rows.shape()[0], fused.groups.rows());

    let mut voxel_reducer = FeatureReducer::<f32>::new(&mut rng, &FeatureReducer::<f32>::VOXEL_FUSION_DIMS);
    let voxels = fused.voxels.clone();
    let vfe = Tensor::<f32>::zeros(&[voxels.len(), 64]);
    let fused = voxel_fusion(&vfe, &voxels, &grid, &s.calib, &s.features, &mut voxel_reducer, Mode::Eval).unwrap();
    assert_eq!(fused.rows.shape(), [voxels.len(), 128]);
}

/// Clamped feature-map cell range `[lo, hi]` touched by bilinear samples in
/// pixel range `[a, b]`.
fn cell_span(a: f64, b: f64, stride: f64, n: usize) -> (usize, usize) {
    let lo = (a / stride).clamp(0.0, (n - 1) as f64).floor() as usize;
    let hi = ((b / stride).clamp(0.0, (n - 1) as f64).floor() as usize + 1).min(n - 1);
    (lo, hi)
}

fn scramble_outside(map: &FeatureMap, keep: &HashSet<(usize, usize)>, rng: &mut ChaCha8Rng) -> FeatureMap {
    let mut out = map.clone();
    let mut changed = 0;
    for r in 0..map.height {
        for c in 0..map.width {
            if !keep.contains(&(r, c)) {
                changed += 1;
                for ch in 0..map.channels {
                    *out.at_mut(ch, r, c) = rng.random_range(-5.0..5.0);
                }
            }
        }
    }
    assert!(changed > 0);
    out
}

#[test]
fn fusion_reads_only_sampled_neighborhoods() {
    let s = generate_scene(&SynthConfig::default(), 1).unwrap();
    let cfg = DetectorConfig::toy(FusionMode::VoxelFusion);
    let grid = &cfg.grid;
    let map = &s.features;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dims = [map.channels, 6, 4];

    let pts = visible_points(&s.cloud, &s.calib, grid).unwrap();
    let m = s.calib.lidar_to_pixels();
    let mut keep = HashSet::new();
    for p in pts.points() {
        let pr = project_point(&m, &s.calib, p.xyz());
        let (c0, c1) = cell_span(pr.u, pr.u, map.stride, map.width);
        let (r0, r1) = cell_span(pr.v, pr.v, map.stride, map.height);
        keep.extend([(r0, c0), (r0, c1), (r1, c0), (r1, c1)]);
    }
    let scrambled = scramble_outside(map, &keep, &mut rng);
    let reducer = FeatureReducer::<f64>::new(&mut rng, &dims);
    let a = point_fusion(&s.cloud, &s.calib, map, &mut reducer.clone(), grid, Mode::Train).unwrap();
    let b = point_fusion(&s.cloud, &s.calib, &scrambled, &mut reducer.clone(), grid, Mode::Train).unwrap();
    assert_eq!(a.rows.data, b.rows.data);

    let voxels = pts.voxel_indices();
    let mut keep = HashSet::new();
    for &idx in &voxels {
        let roi = project_voxel_roi(idx, grid, &s.calib);
        if !roi.valid {
            continue;
        }
        let (c0, c1) = cell_span(roi.u_min, roi.u_max, map.stride, map.width);
        let (r0, r1) = cell_span(roi.v_min, roi.v_max, map.stride, map.height);
        for r in r0..=r1 {
            for c in c0..=c1 {
                keep.insert((r, c));
            }
        }
    }
    let scrambled = scramble_outside(map, &keep, &mut rng);
    let vfe = random_tensor(&mut rng, &[voxels.len(), 8], 1.0);
    let a = voxel_fusion(&vfe, &voxels, grid, &s.calib, map, &mut reducer.clone(), Mode::Train).unwrap();
    let b = voxel_fusion(&vfe, &voxels, grid, &s.calib, &scrambled, &mut reducer.clone(), Mode::Train).unwrap();
    assert_eq!(a.rows.data, b.rows.data);
}

#[test]
fn collapsed_roi_pools_to_the_point_sample() {
    let s = full_scene(2);
    let grid = DetectorConfig::default().grid;
    let pts = visible_points(&s.cloud, &s.calib, &grid).unwrap();
    let m = s.calib.lidar_to_pixels();
    let mut checked = 0;
    for v in pts.grid.voxels.iter().step_by(7) {
        let pr = project_point(&m, &s.calib, v.centroid);
        if !pr.in_image {
            continue;
        }
        let eps = 1e-9;
        let roi = Roi {
            u_min: pr.u - eps,
            v_min: pr.v - eps,
            u_max: pr.u + eps,
            v_max: pr.v + eps,
            valid: true,
        };
        let pooled = roi_pool(&s.features, &roi);
        let sampled = sample_feature(&s.features, pr.u, pr.v);
        assert_eq!(pooled.len(), 512);
        for (p, q) in pooled.iter().zip(&sampled) {
            assert!((p - q).abs() <= 1e-6, "{p} vs {q}");
        }
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn fusion_is_deterministic() {
    let s = full_scene(3);
    let grid = DetectorConfig::default().grid;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let reducer = FeatureReducer::<f32>::new(&mut rng, &FeatureReducer::<f32>::POINT_FUSION_DIMS);
    let run = || point_fusion(&s.cloud, &s.calib, &s.features, &mut reducer.clone(), &grid, Mode::Train).unwrap();
    assert_eq!(run().rows.data, run().rows.data);

    let reducer = FeatureReducer::<f32>::new(&mut rng, &FeatureReducer::<f32>::VOXEL_FUSION_DIMS);
    let voxels = run().voxels;
    let vfe = random_tensor(&mut rng, &[voxels.len(), 64], 1.0).cast::<f32>();
    let run =
        || voxel_fusion(&vfe, &voxels, &grid, &s.calib, &s.features, &mut reducer.clone(), Mode::Train).unwrap();
    assert_eq!(run().rows.data, run().rows.data);
}

#[test]
fn inference_output_is_sorted_and_separated() {
    for mode in FusionMode::ALL {
        let cfg = DetectorConfig::toy(mode);
        let nms = cfg.infer.nms_iou;
        let mut det = Detector::<f32>::new(cfg.clone()).unwrap();
        // A positive score bias makes every anchor a candidate.
        det.network.score_head.bias.as_mut().unwrap().value.data.fill(3.0);
        for index in 0..3 {
            let (input, _) = common::synth_scene_input(&cfg, index);
            let dets = det.infer(&input).unwrap();
            assert!(dets.len() > 5, "{mode}: {} detections", dets.len());
            for w in dets.windows(2) {
                assert!(w[0].score >= w[1].score);
            }
            for (i, a) in dets.iter().enumerate() {
                for b in &dets[i + 1..] {
                    assert!(bev_iou(&a.box3d, &b.box3d) < nms);
                }
            }
        }
    }
}
