//! Seeded toy datasets in the KITTI directory layout.
//!
//! Scenes hold cuboid objects on a flat ground plane seen by a forward
//! camera. Half of the objects are `Car`; the rest are `Decoy`, drawn from
//! the same size, pose and reflectance distributions so that the point cloud
//! alone cannot tell them apart. Only the image separates them: each object
//! is painted with a color whose hue parameter overlaps between the classes,
//! and the synthetic feature map carries an exact class signature.

use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorError, KittiLayout};
use crate::fusion::synthetic_feature_map;
use crate::geometry::{lidar_box_to_camera, normalize_angle, project_point, Box3D, GeometryError};
use crate::kitti_io::{
    write_image, write_point_cloud, write_tensor, Calibration, FeatureMap, GroundTruthObject, Image, KittiError,
    PointCloud, RawPoint,
};

pub const DECOY: &str = "Decoy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub image_size: (u32, u32),
    pub focal: f64,
    /// LiDAR height above the ground.
    pub sensor_height: f64,
    /// Expected points per m² of a face seen head-on at 1 m.
    pub point_density: f64,
    pub ground_points: usize,
    pub feature_stride: f64,
    pub feature_channels: usize,
    /// Per-pixel color noise (standard deviation, on a 0–1 scale).
    pub pixel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_scenes: 200,
            val_scenes: 50,
            min_objects: 4,
            max_objects: 8,
            image_size: (640, 192),
            focal: 320.0,
            sensor_height: 1.73,
            point_density: 3000.0,
            ground_points: 600,
            feature_stride: 8.0,
            feature_channels: crate::fusion::SYNTHETIC_CHANNELS,
            pixel_noise: 0.15,
        }
    }
}

impl SynthConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// Everything generated for one scene.
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub cloud: PointCloud,
    pub calib: Calibration,
    pub labels: Vec<GroundTruthObject>,
    pub image: Image,
    pub features: FeatureMap,
    /// LiDAR-frame boxes, aligned with `labels`.
    pub boxes: Vec<Box3D>,
}

/// Pinhole camera at the LiDAR origin looking along LiDAR +x.
pub fn synthetic_calibration(cfg: &SynthConfig) -> Calibration {
    let (w, h) = cfg.image_size;
    let f = cfg.focal;
    let p = Matrix3x4::new(f, 0.0, w as f64 / 2.0, 0.0, 0.0, f, h as f64 / 2.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let tr = Matrix3x4::new(0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0);
    Calibration::new(p, Matrix3::identity(), tr, cfg.image_size).expect("permutation is a rotation")
}

struct Object {
    class: &'static str,
    box3d: Box3D,
    /// Color parameter in [0, 1].
    hue: f64,
}

fn place_objects(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<Object> {
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let ground = -cfg.sensor_height;
    let mut objects: Vec<Object> = Vec::with_capacity(n);
    let mut attempts = 0;
    while objects.len() < n && attempts < 200 {
        attempts += 1;
        let x: f64 = rng.random_range(8.0..23.0);
        let y_max = (0.9 * x - 2.5).min(10.5);
        let y = rng.random_range(-y_max..y_max);
        let size = [rng.random_range(3.5..4.3), rng.random_range(1.5..1.8), rng.random_range(1.4..1.7)];
        let yaw = rng.random_range(-1.2..1.2);
        if objects.iter().any(|o| (o.box3d.center[0] - x).hypot(o.box3d.center[1] - y) < 5.0) {
            continue;
        }
        // Alternate classes so every scene is balanced.
        let class = if objects.len() % 2 == 0 { "Car" } else { DECOY };
        let hue = if class == "Car" { rng.random_range(0.3..1.0) } else { rng.random_range(0.0..0.7) };
        objects.push(Object {
            class,
            box3d: Box3D::new([x, y, ground + size[2] / 2.0], size, yaw),
            hue,
        });
    }
    objects
}

/// Points on the faces of `b` that face the sensor, about
/// `density · area · cos(incidence) / distance²` per face.
fn sample_box_surface(rng: &mut ChaCha8Rng, b: &Box3D, density: f64, noise: &Normal<f64>, out: &mut Vec<RawPoint>) {
    let (s, c) = b.yaw.sin_cos();
    let axes = [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]];
    let half = [b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0];
    let reflectance = rng.random_range(0.2..0.6);
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            if axis == 2 && sign < 0.0 {
                continue; // underside
            }
            let n = axes[axis].map(|v| v * sign);
            let center: [f64; 3] = std::array::from_fn(|k| b.center[k] + n[k] * half[axis]);
            let dist2: f64 = center.iter().map(|v| v * v).sum();
            let facing = -(n[0] * center[0] + n[1] * center[1] + n[2] * center[2]) / dist2.sqrt();
            if facing <= 0.0 {
                continue;
            }
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let area = 4.0 * half[u] * half[v];
            let expected = density * area * facing / dist2;
            let count = expected.floor() as usize + usize::from(rng.random::<f64>() < expected.fract());
            for _ in 0..count {
                let a = rng.random_range(-1.0..1.0) * half[u];
                let bb = rng.random_range(-1.0..1.0) * half[v];
                let p: [f64; 3] = std::array::from_fn(|k| {
                    center[k] + a * axes[u][k] + bb * axes[v][k] + noise.sample(rng)
                });
                out.push(RawPoint::new(p[0], p[1], p[2], reflectance));
            }
        }
    }
}

fn ground_points(rng: &mut ChaCha8Rng, cfg: &SynthConfig, noise: &Normal<f64>, out: &mut Vec<RawPoint>) {
    // Ring area grows with d while density falls with d², so d has a 1/d
    // density: log-uniform.
    let (lo, hi) = (3.0f64.ln(), 30.0f64.ln());
    for _ in 0..cfg.ground_points {
        let d = rng.random_range(lo..hi).exp();
        let theta = rng.random_range(-0.85..0.85);
        out.push(RawPoint::new(
            d * f64::cos(theta),
            d * f64::sin(theta),
            -cfg.sensor_height + noise.sample(rng),
            rng.random_range(0.0..0.3),
        ));
    }
}

fn paint(rng: &mut ChaCha8Rng, cfg: &SynthConfig, objects: &[(Object, [f64; 4])]) -> Image {
    let (w, h) = (cfg.image_size.0 as usize, cfg.image_size.1 as usize);
    let noise = Normal::new(0.0, cfg.pixel_noise).expect("valid deviation");
    let horizon = h / 2;
    let mut base = vec![[0.0f64; 3]; w * h];
    for (y, row) in base.chunks_mut(w).enumerate() {
        let c = if y < horizon { [0.55, 0.6, 0.65] } else { [0.35, 0.33, 0.3] };
        row.iter_mut().for_each(|p| *p = c);
    }
    // Far to near, so nearer objects cover farther ones.
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| {
        let da = objects[a].0.box3d.center[0];
        let db = objects[b].0.box3d.center[0];
        db.total_cmp(&da)
    });
    for i in order {
        let (obj, [l, t, r, b]) = &objects[i];
        let color = [obj.hue, 0.3, 1.0 - obj.hue];
        for y in (t.floor().max(0.0) as usize)..(b.ceil() as usize).min(h) {
            for x in (l.floor().max(0.0) as usize)..(r.ceil() as usize).min(w) {
                base[y * w + x] = color;
            }
        }
    }
    let mut img = Image::new(w, h);
    for (i, p) in base.iter().enumerate() {
        let rgb = p.map(|c| ((c + noise.sample(rng)).clamp(0.0, 1.0) * 255.0).round() as u8);
        img.set_pixel(i % w, i / w, rgb);
    }
    img
}

/// Unclipped and clipped 2D boxes of a LiDAR box in front of the camera.
fn image_boxes(b: &Box3D, calib: &Calibration) -> Option<([f64; 4], [f64; 4])> {
    let m = calib.lidar_to_pixels();
    let mut raw = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in b.corners() {
        let p = project_point(&m, calib, c);
        if p.depth <= 0.1 {
            return None;
        }
        raw = [raw[0].min(p.u), raw[1].min(p.v), raw[2].max(p.u), raw[3].max(p.v)];
    }
    let (w, h) = (calib.image_width as f64, calib.image_height as f64);
    let clipped = [raw[0].clamp(0.0, w), raw[1].clamp(0.0, h), raw[2].clamp(0.0, w), raw[3].clamp(0.0, h)];
    (clipped[2] > clipped[0] && clipped[3] > clipped[1]).then_some((raw, clipped))
}

fn area(b: &[f64; 4]) -> f64 {
    (b[2] - b[0]).max(0.0) * (b[3] - b[1]).max(0.0)
}

/// Generates scene `index` of the dataset; each index has its own random
/// stream, so scenes do not depend on each other.
pub fn generate_scene(cfg: &SynthConfig, index: u64) -> Result<SynthScene, GeometryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let calib = synthetic_calibration(cfg);
    let noise = Normal::new(0.0, 0.02).expect("valid deviation");
    let mut points = Vec::new();
    let placed = place_objects(&mut rng, cfg);
    let mut visible = Vec::new();
    for obj in placed {
        let Some((raw, clipped)) = image_boxes(&obj.box3d, &calib) else {
            continue;
        };
        sample_box_surface(&mut rng, &obj.box3d, cfg.point_density, &noise, &mut points);
        let truncation = 1.0 - area(&clipped) / area(&raw).max(1e-12);
        visible.push((obj, clipped, truncation));
    }
    ground_points(&mut rng, cfg, &noise, &mut points);
    let mut labels = Vec::with_capacity(visible.len());
    let mut boxes = Vec::with_capacity(visible.len());
    for (obj, bbox, truncation) in &visible {
        let cam = lidar_box_to_camera(&obj.box3d, &calib)?;
        let [x, _, z] = cam.location;
        labels.push(GroundTruthObject {
            class_name: obj.class.to_string(),
            truncation: (truncation * 100.0).round() / 100.0,
            occlusion: 0,
            alpha: normalize_angle(cam.rotation_y - x.atan2(z)),
            bbox2d: *bbox,
            dims: cam.dims,
            location: cam.location,
            rotation_y: cam.rotation_y,
            score: None,
        });
        boxes.push(obj.box3d);
    }
    let painted: Vec<(Object, [f64; 4])> = visible.into_iter().map(|(o, b, _)| (o, b)).collect();
    let image = paint(&mut rng, cfg, &painted);
    let features = synthetic_feature_map(
        cfg.image_size.0,
        cfg.image_size.1,
        &labels,
        cfg.feature_stride,
        cfg.feature_channels,
        "Car",
    );
    Ok(SynthScene {
        cloud: PointCloud::new(points),
        calib,
        labels,
        image,
        features,
        boxes,
    })
}

/// Formats labels as KITTI label text.
pub fn format_labels(labels: &[GroundTruthObject]) -> String {
    labels
        .iter()
        .map(|o| {
            format!(
                "{} {:.2} {} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}\n",
                o.class_name,
                o.truncation,
                o.occlusion,
                o.alpha,
                o.bbox2d[0],
                o.bbox2d[1],
                o.bbox2d[2],
                o.bbox2d[3],
                o.dims[0],
                o.dims[1],
                o.dims[2],
                o.location[0],
                o.location[1],
                o.location[2],
                o.rotation_y
            )
        })
        .collect()
}

fn io_err(path: &Path, source: std::io::Error) -> KittiError {
    KittiError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the train and validation scenes under `root` together with
/// `train.txt`, `val.txt` and the generator settings in `synth.toml`.
pub fn write_dataset(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<(), DetectorError> {
    let layout = KittiLayout::new(root.as_ref());
    for dir in ["velodyne", "calib", "label_2", "image_2", "features"] {
        let d = layout.root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
    }
    let total = cfg.train_scenes + cfg.val_scenes;
    let mut ids = Vec::with_capacity(total);
    for i in 0..total {
        let id = format!("{i:06}");
        let scene = generate_scene(cfg, i as u64)?;
        write_point_cloud(layout.velodyne(&id), &scene.cloud)?;
        let calib_path = layout.calib(&id);
        std::fs::write(&calib_path, scene.calib.to_kitti_string()).map_err(|e| io_err(&calib_path, e))?;
        let label_path = layout.label(&id);
        std::fs::write(&label_path, format_labels(&scene.labels)).map_err(|e| io_err(&label_path, e))?;
        write_image(layout.image(&id), &scene.image)?;
        write_tensor(layout.features(&id), &scene.features)?;
        ids.push(id);
    }
    let (train, val) = ids.split_at(cfg.train_scenes);
    for (name, list) in [("train", train), ("val", val)] {
        let path = layout.split(name);
        let text: String = list.iter().map(|id| format!("{id}\n")).collect();
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    let path = layout.root.join("synth.toml");
    std::fs::write(&path, toml::to_string(cfg).expect("config serializes")).map_err(|e| io_err(&path, e))?;
    Ok(())
}
