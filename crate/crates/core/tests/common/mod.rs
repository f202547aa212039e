//! Fixtures shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxfuse::detector::{
    assign_targets, compute_loss, prepare_input, Detector, DetectorConfig, FusionMode, NetworkConfig, SceneInput,
};
use voxfuse::geometry::{Box3D, VoxelGridConfig};
use voxfuse::neural::{
    flat_grads, flat_params, gradient_check_piecewise, set_flat_params, zero_grads, GradCheck, Mode,
};
use voxfuse::synth::{generate_scene, SynthConfig};

/// A 16×16×4 grid with a network a few thousand parameters large.
pub fn tiny_config(mode: FusionMode) -> DetectorConfig {
    let mut cfg = DetectorConfig::toy(mode);
    cfg.grid = VoxelGridConfig {
        range_min: [0.0, -6.4, -3.0],
        range_max: [12.8, 6.4, 1.0],
        voxel_size: [0.8, 0.8, 1.0],
        max_points_per_voxel: 8,
        rng_seed: 0,
    };
    cfg.network = NetworkConfig {
        image_channels: 3,
        point_reducer: vec![4, 2],
        voxel_reducer: vec![4, 3],
        vfe: vec![4, 6],
        middle_channels: vec![3],
        middle_depth_strides: vec![2],
        rpn_channels: vec![4, 4],
        convs_per_block: 1,
        upsample_channels: 3,
        ..cfg.network
    };
    cfg
}

/// Random voxels and points shaped for `mode`.
pub fn random_input(rng: &mut ChaCha8Rng, cfg: &DetectorConfig, voxels: usize, point_image_dim: usize) -> SceneInput {
    let [nx, ny, nz] = cfg.grid.grid_dims();
    let mut cells = Vec::new();
    while cells.len() < voxels {
        let c = [rng.random_range(0..nx), rng.random_range(0..ny), rng.random_range(0..nz)];
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let counts: Vec<usize> = (0..voxels).map(|_| rng.random_range(1..=3)).collect();
    let n: usize = counts.iter().sum();
    let points = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    let mode = cfg.fusion_mode;
    let point_image = mode
        .per_point()
        .then(|| (0..n * point_image_dim).map(|_| rng.random_range(-1.0..1.0)).collect());
    let voxel_image = (mode == FusionMode::VoxelFusion)
        .then(|| (0..voxels * cfg.network.image_channels).map(|_| rng.random_range(-1.0..1.0)).collect());
    SceneInput {
        voxels: cells,
        counts,
        points,
        point_image,
        voxel_image,
    }
}

pub fn tiny_gt() -> Vec<Box3D> {
    vec![
        Box3D::new([6.1, 0.3, -1.0], [3.9, 1.6, 1.56], 0.1),
        Box3D::new([2.3, -3.4, -0.9], [4.1, 1.7, 1.5], 1.5),
    ]
}

/// Central-difference check of the full detection loss with respect to
/// every parameter, in double precision. Coordinates whose probes flip a
/// ReLU or a max-pool winner are skipped and counted.
pub fn full_loss_gradcheck(mode: FusionMode, seed: u64, h: f64) -> GradCheck {
    let mut cfg = tiny_config(mode);
    cfg.seed = seed;
    let mut det = Detector::<f64>::new(cfg.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = random_input(&mut rng, &cfg, 12, det.network.point_image_dim());
    let targets = assign_targets(&det.anchors, &tiny_gt(), &cfg.anchors);
    assert!(targets.count(voxfuse::detector::AnchorLabel::Positive) > 0);
    let params = flat_params(&mut det.network);
    let loss_cfg = cfg.loss.clone();
    gradient_check_piecewise(
        |p| {
            set_flat_params(&mut det.network, p);
            let (out, cache) = det.network.forward(&input, Mode::Train).unwrap();
            let (loss, dl, dr) = compute_loss(&out, &targets, &loss_cfg).unwrap();
            zero_grads(&mut det.network);
            det.network.backward(&cache, &dl, &dr);
            (loss.total, flat_grads(&mut det.network), cache.activation_pattern())
        },
        &params,
        h,
    )
}

/// Network inputs of synthetic scene `index` under `cfg`, with its targets.
pub fn synth_scene_input(cfg: &DetectorConfig, index: u64) -> (SceneInput, Vec<Box3D>) {
    let s = generate_scene(&SynthConfig::default(), index).unwrap();
    let input = prepare_input(&s.cloud, &s.calib, Some(&s.features), Some(&s.image), cfg).unwrap();
    let gt = voxfuse::detector::target_boxes(&s.labels, &s.calib, cfg).unwrap();
    (input, gt)
}
