use crate::geometry::Roi;
use crate::kitti_io::{FeatureMap, Image};

/// How a per-point feature is read off the map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Bilinear,
    Nearest,
}

/// Samples every channel at original-image pixel `(u, v)`.
///
/// Feature cell `(row, col)` is centered at cell coordinates `(col, row)`,
/// i.e. at pixel `(col·stride, row·stride)`. Coordinates beyond the border
/// are clamped onto it.
pub fn sample_feature(map: &FeatureMap, u: f64, v: f64) -> Vec<f64> {
    sample_feature_with(map, u, v, Sampling::Bilinear)
}

pub fn sample_feature_with(map: &FeatureMap, u: f64, v: f64, sampling: Sampling) -> Vec<f64> {
    let mut out = vec![0.0; map.channels];
    sample_into(map, u, v, sampling, &mut out, 1.0);
    out
}

/// Adds `weight · sample(u, v)` into `out`.
pub(crate) fn sample_into(map: &FeatureMap, u: f64, v: f64, sampling: Sampling, out: &mut [f64], weight: f64) {
    if map.width == 0 || map.height == 0 {
        return;
    }
    let x = (u / map.stride).clamp(0.0, (map.width - 1) as f64);
    let y = (v / map.stride).clamp(0.0, (map.height - 1) as f64);
    match sampling {
        Sampling::Nearest => {
            let (c, r) = (x.round() as usize, y.round() as usize);
            for (ch, o) in out.iter_mut().enumerate() {
                *o += weight * map.at(ch, r, c) as f64;
            }
        }
        Sampling::Bilinear => {
            let (c0, r0) = (x.floor() as usize, y.floor() as usize);
            let (c1, r1) = ((c0 + 1).min(map.width - 1), (r0 + 1).min(map.height - 1));
            let (fx, fy) = (x - c0 as f64, y - r0 as f64);
            let w00 = (1.0 - fx) * (1.0 - fy);
            let w01 = fx * (1.0 - fy);
            let w10 = (1.0 - fx) * fy;
            let w11 = fx * fy;
            for (ch, o) in out.iter_mut().enumerate() {
                let s = w00 * map.at(ch, r0, c0) as f64
                    + w01 * map.at(ch, r0, c1) as f64
                    + w10 * map.at(ch, r1, c0) as f64
                    + w11 * map.at(ch, r1, c1) as f64;
                *o += weight * s;
            }
        }
    }
}

/// Side of the ROI sampling grid.
pub const ROI_GRID: usize = 7;

/// Average of bilinear samples at the centers of a 7×7 grid of bins laid
/// over the ROI. An invalid ROI pools to the zero vector.
pub fn roi_pool(map: &FeatureMap, roi: &Roi) -> Vec<f64> {
    let mut out = vec![0.0; map.channels];
    if !roi.valid {
        return out;
    }
    let n = ROI_GRID as f64;
    let weight = 1.0 / (n * n);
    for i in 0..ROI_GRID {
        let v = roi.v_min + (i as f64 + 0.5) / n * (roi.v_max - roi.v_min);
        for j in 0..ROI_GRID {
            let u = roi.u_min + (j as f64 + 0.5) / n * (roi.u_max - roi.u_min);
            sample_into(map, u, v, Sampling::Bilinear, &mut out, weight);
        }
    }
    out
}

/// `k×k` RGB patch centered at the rounded pixel, border-clamped, flattened
/// channel-major with values in `[0, 1]`.
pub fn crop_raw_patch(image: &Image, u: f64, v: f64, k: usize) -> Vec<f64> {
    assert!(k % 2 == 1, "patch size must be odd");
    let half = (k / 2) as i64;
    let cu = u.round() as i64;
    let cv = v.round() as i64;
    let clamp = |x: i64, n: usize| x.clamp(0, n as i64 - 1) as usize;
    let mut out = vec![0.0; 3 * k * k];
    for dy in 0..k {
        let y = clamp(cv + dy as i64 - half, image.height);
        for dx in 0..k {
            let x = clamp(cu + dx as i64 - half, image.width);
            for c in 0..3 {
                out[(c * k + dy) * k + dx] = image.value(x, y, c);
            }
        }
    }
    out
}
