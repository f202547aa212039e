use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Matrix4};

use super::{read_file, KittiError, Result};

/// Image size assumed when the calibration file carries no `image_size` entry
/// (the KITTI color camera resolution).
pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (1242, 375);

const ORTHONORMAL_TOL: f64 = 1e-3;

/// Projection chain from the LiDAR frame to pixels of the left color camera.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    /// `P2`: rectified camera → pixels.
    pub p: Matrix3x4<f64>,
    /// `R0_rect`: camera → rectified camera.
    pub r0: Matrix3<f64>,
    /// `Tr_velo_to_cam`: LiDAR → camera, rigid.
    pub tr_velo_to_cam: Matrix3x4<f64>,
    pub image_width: u32,
    pub image_height: u32,
}

impl Calibration {
    /// Builds a calibration and checks that both rotation blocks are
    /// orthonormal.
    pub fn new(
        p: Matrix3x4<f64>,
        r0: Matrix3<f64>,
        tr_velo_to_cam: Matrix3x4<f64>,
        image_size: (u32, u32),
    ) -> Result<Self> {
        check_orthonormal("R0_rect", &r0)?;
        check_orthonormal("Tr_velo_to_cam", &tr_velo_to_cam.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(Self {
            p,
            r0,
            tr_velo_to_cam,
            image_width: image_size.0,
            image_height: image_size.1,
        })
    }

    pub fn with_image_size(mut self, width: u32, height: u32) -> Self {
        self.image_width = width;
        self.image_height = height;
        self
    }

    /// Homogeneous LiDAR → rectified camera transform `[R0|0] · [Tr; 0 0 0 1]`.
    pub fn lidar_to_rect(&self) -> Matrix4<f64> {
        let mut r0 = Matrix4::identity();
        r0.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r0);
        let mut tr = Matrix4::identity();
        tr.fixed_view_mut::<3, 4>(0, 0).copy_from(&self.tr_velo_to_cam);
        r0 * tr
    }

    /// Full LiDAR → pixel matrix.
    pub fn lidar_to_pixels(&self) -> Matrix3x4<f64> {
        self.p * self.lidar_to_rect()
    }

    /// Serializes in the KITTI object calibration layout. `P0`, `P1` and
    /// `P3` are written as copies of `P2`; only `P2` is ever read back.
    pub fn to_kitti_string(&self) -> String {
        let mut out = String::new();
        let p = row_major(self.p.transpose().as_slice());
        for key in ["P0", "P1", "P2", "P3"] {
            writeln!(out, "{key}: {p}").unwrap();
        }
        writeln!(out, "R0_rect: {}", row_major(self.r0.transpose().as_slice())).unwrap();
        writeln!(
            out,
            "Tr_velo_to_cam: {}",
            row_major(self.tr_velo_to_cam.transpose().as_slice())
        )
        .unwrap();
        writeln!(out, "image_size: {} {}", self.image_width, self.image_height).unwrap();
        out
    }
}

fn row_major(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn check_orthonormal(key: &str, m: &Matrix3<f64>) -> Result<()> {
    let deviation = (m.transpose() * m - Matrix3::identity()).abs().max();
    if deviation > ORTHONORMAL_TOL || !deviation.is_finite() {
        return Err(KittiError::NotOrthonormal {
            key: key.to_string(),
            deviation,
        });
    }
    Ok(())
}

fn parse_values(key: &str, text: &str, expected: usize) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(expected);
    for tok in text.split_whitespace() {
        let v: f64 = tok.parse().map_err(|_| KittiError::MalformedMatrix {
            key: key.to_string(),
            expected,
            found: values.len(),
        })?;
        values.push(v);
    }
    if values.len() != expected || values.iter().any(|v| !v.is_finite()) {
        return Err(KittiError::MalformedMatrix {
            key: key.to_string(),
            expected,
            found: values.len(),
        });
    }
    Ok(values)
}

/// Parses KITTI object calibration text. Only `P2`, `R0_rect`,
/// `Tr_velo_to_cam` and the optional `image_size` line are consumed.
pub fn parse_calibration(text: &str) -> Result<Calibration> {
    let mut p2 = None;
    let mut r0 = None;
    let mut tr = None;
    let mut size = None;
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "P2" => p2 = Some(parse_values("P2", rest, 12)?),
            "R0_rect" => r0 = Some(parse_values("R0_rect", rest, 9)?),
            "Tr_velo_to_cam" => tr = Some(parse_values("Tr_velo_to_cam", rest, 12)?),
            "image_size" => {
                let v = parse_values("image_size", rest, 2)?;
                if v.iter().any(|x| *x < 1.0 || x.fract() != 0.0 || *x > u32::MAX as f64) {
                    return Err(KittiError::MalformedMatrix {
                        key: "image_size".into(),
                        expected: 2,
                        found: 0,
                    });
                }
                size = Some((v[0] as u32, v[1] as u32));
            }
            _ => {}
        }
    }
    let p2 = p2.ok_or_else(|| KittiError::MissingKey("P2".into()))?;
    let r0 = r0.ok_or_else(|| KittiError::MissingKey("R0_rect".into()))?;
    let tr = tr.ok_or_else(|| KittiError::MissingKey("Tr_velo_to_cam".into()))?;
    Calibration::new(
        Matrix3x4::from_row_slice(&p2),
        Matrix3::from_row_slice(&r0),
        Matrix3x4::from_row_slice(&tr),
        size.unwrap_or(DEFAULT_IMAGE_SIZE),
    )
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<Calibration> {
    let bytes = read_file(path.as_ref())?;
    parse_calibration(&String::from_utf8_lossy(&bytes))
}
