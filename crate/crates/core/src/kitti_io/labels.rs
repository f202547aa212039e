use std::path::Path;

use super::{read_file, KittiError, Result};

pub const DONT_CARE: &str = "DontCare";

/// One line of a KITTI label (15 fields) or result (16 fields, trailing
/// score) file. Geometry is in the rectified camera frame; `location` is the
/// bottom center of the box.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthObject {
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    /// `(left, top, right, bottom)` in pixels.
    pub bbox2d: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dims: [f64; 3],
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl GroundTruthObject {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }

    pub fn bbox_height(&self) -> f64 {
        self.bbox2d[3] - self.bbox2d[1]
    }
}

fn number(line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| KittiError::NumericParse {
            line,
            text: tok.to_string(),
        })
}

fn parse_line(line: usize, text: &str) -> Result<GroundTruthObject> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(KittiError::FieldCount {
            line,
            found: fields.len(),
        });
    }
    let mut v = [0.0; 15];
    for (slot, tok) in v.iter_mut().zip(&fields).skip(1) {
        *slot = number(line, tok)?;
    }
    let occlusion = fields[2].parse::<i32>().map_err(|_| KittiError::NumericParse {
        line,
        text: fields[2].to_string(),
    })?;
    let score = match fields.get(15) {
        Some(tok) => Some(number(line, tok)?),
        None => None,
    };
    let obj = GroundTruthObject {
        class_name: fields[0].to_string(),
        truncation: v[1],
        occlusion,
        alpha: v[3],
        bbox2d: [v[4], v[5], v[6], v[7]],
        dims: [v[8], v[9], v[10]],
        location: [v[11], v[12], v[13]],
        rotation_y: v[14],
        score,
    };
    // DontCare regions carry -1 placeholders for the 3D fields.
    if !obj.is_dont_care() {
        if obj.bbox2d[2] < obj.bbox2d[0] || obj.bbox2d[3] < obj.bbox2d[1] {
            return Err(KittiError::InvalidValue {
                line,
                reason: "2D box has right < left or bottom < top".into(),
            });
        }
        if obj.dims.iter().any(|d| *d < 0.0) {
            return Err(KittiError::InvalidValue {
                line,
                reason: "negative box dimension".into(),
            });
        }
    }
    Ok(obj)
}

/// Parses label or result text. Blank lines are skipped; `DontCare` entries
/// are kept (see [`GroundTruthObject::is_dont_care`]).
pub fn parse_labels(text: &str) -> Result<Vec<GroundTruthObject>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(i + 1, l))
        .collect()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<GroundTruthObject>> {
    let bytes = read_file(path.as_ref())?;
    parse_labels(&String::from_utf8_lossy(&bytes))
}
