use std::path::Path;

use super::{read_file, write_file, KittiError, Result};

const RECORD: usize = 16;

/// A single LiDAR return. Coordinates are in the LiDAR frame
/// (x forward, y left, z up), in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RawPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
}

impl RawPoint {
    pub fn new(x: f64, y: f64, z: f64, r: f64) -> Self {
        Self { x, y, z, r }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Frame {
    #[default]
    Lidar,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<RawPoint>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<RawPoint>) -> Self {
        Self {
            points,
            frame: Frame::Lidar,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Decodes packed little-endian `f32` quadruples `(x, y, z, r)`.
pub fn parse_point_cloud(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() % RECORD != 0 {
        return Err(KittiError::TruncatedFile {
            len: bytes.len(),
            record: RECORD,
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD);
    for (index, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let mut v = [0f32; 4];
        for (k, word) in rec.chunks_exact(4).enumerate() {
            v[k] = f32::from_le_bytes([word[0], word[1], word[2], word[3]]);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(KittiError::NonFiniteValue { index });
        }
        if !(0.0..=1.0).contains(&v[3]) {
            return Err(KittiError::ReflectanceOutOfRange {
                index,
                value: v[3],
            });
        }
        points.push(RawPoint::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64));
    }
    Ok(PointCloud::new(points))
}

pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_point_cloud(&read_file(path.as_ref())?)
}

pub fn write_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut bytes = Vec::with_capacity(cloud.len() * RECORD);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.r] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    write_file(path.as_ref(), &bytes)
}
