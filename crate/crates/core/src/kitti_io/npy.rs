//! NPY v1/v2 reader and v1 writer for little-endian float arrays.

use std::path::{Path, PathBuf};

use super::{read_file, write_file, KittiError, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Clone, Debug, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            NpyData::F32(v) => v.iter().map(|x| *x as f64).collect(),
            NpyData::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

/// A dense `(channels, height, width)` image feature map. `stride` is the
/// number of original-image pixels per feature cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: f64,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize, stride: f64) -> Self {
        assert!(stride > 0.0, "stride must be positive");
        Self {
            channels,
            height,
            width,
            stride,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn at(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, row: usize, col: usize) -> &mut f32 {
        &mut self.data[(c * self.height + row) * self.width + col]
    }
}

/// Extracts the raw text of `key`'s value from a Python dict literal.
fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let start = header
        .find(&format!("'{key}'"))
        .or_else(|| header.find(&format!("\"{key}\"")))?;
    let rest = &header[start + key.len() + 2..];
    let rest = rest.trim_start().strip_prefix(':')?.trim_start();
    if rest.starts_with('(') {
        let end = rest.find(')')?;
        Some(&rest[..=end])
    } else {
        let end = rest.find([',', '}']).unwrap_or(rest.len());
        Some(rest[..end].trim())
    }
}

fn parse_shape(text: &str) -> Result<Vec<usize>> {
    let inner = text
        .strip_prefix('(')
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| KittiError::BadHeader(format!("shape `{text}`")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| KittiError::BadHeader(format!("shape entry `{t}`")))
        })
        .collect()
}

/// Decodes an NPY buffer holding `<f4` or `<f8` data in C order.
pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(KittiError::BadMagic);
    }
    let major = bytes[6];
    let (header_len, header_start): (usize, usize) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(KittiError::BadHeader("short v2 preamble".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(KittiError::BadHeader(format!("unsupported version {v}"))),
    };
    let data_start = header_start
        .checked_add(header_len)
        .filter(|end| *end <= bytes.len())
        .ok_or_else(|| KittiError::BadHeader("header runs past end of file".into()))?;
    let header = std::str::from_utf8(&bytes[header_start..data_start])
        .map_err(|_| KittiError::BadHeader("header is not text".into()))?;

    let descr = dict_value(header, "descr")
        .ok_or_else(|| KittiError::BadHeader("missing descr".into()))?
        .trim_matches(|c| c == '\'' || c == '"');
    let fortran = dict_value(header, "fortran_order")
        .ok_or_else(|| KittiError::BadHeader("missing fortran_order".into()))?;
    match fortran {
        "False" => {}
        "True" => return Err(KittiError::BadHeader("Fortran-ordered arrays are not supported".into())),
        other => return Err(KittiError::BadHeader(format!("fortran_order `{other}`"))),
    }
    let shape = parse_shape(
        dict_value(header, "shape").ok_or_else(|| KittiError::BadHeader("missing shape".into()))?,
    )?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, d| acc.checked_mul(*d))
        .ok_or_else(|| KittiError::BadHeader("shape overflows".into()))?;

    let payload = &bytes[data_start..];
    let width = match descr {
        "<f4" => 4,
        "<f8" => 8,
        other => return Err(KittiError::UnsupportedDtype(other.to_string())),
    };
    let expected = count
        .checked_mul(width)
        .ok_or_else(|| KittiError::BadHeader("shape overflows".into()))?;
    if payload.len() < expected {
        return Err(KittiError::TruncatedData {
            expected,
            found: payload.len(),
        });
    }
    let payload = &payload[..expected];
    let data = if width == 4 {
        NpyData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        )
    } else {
        NpyData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    };
    Ok(NpyArray { shape, data })
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    parse_npy(&read_file(path.as_ref())?)
}

/// Decodes an `(C, H, W)` `<f4` feature map.
pub fn parse_tensor(bytes: &[u8], stride: f64) -> Result<FeatureMap> {
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(KittiError::BadHeader(format!("stride {stride} must be positive")));
    }
    let arr = parse_npy(bytes)?;
    let data = match arr.data {
        NpyData::F32(v) => v,
        NpyData::F64(_) => return Err(KittiError::UnsupportedDtype("<f8".into())),
    };
    if arr.shape.len() != 3 {
        return Err(KittiError::UnsupportedRank(arr.shape.len()));
    }
    Ok(FeatureMap {
        channels: arr.shape[0],
        height: arr.shape[1],
        width: arr.shape[2],
        stride,
        data,
    })
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("stride")
}

/// Reads the `<stem>.stride` file next to a feature map: either a bare
/// number or `stride: <number>`.
pub fn read_stride_sidecar(npy_path: impl AsRef<Path>) -> Result<f64> {
    let path = sidecar_path(npy_path.as_ref());
    let text = String::from_utf8_lossy(&read_file(&path)?).into_owned();
    let value = text.trim();
    let value = value.strip_prefix("stride:").unwrap_or(value).trim();
    value
        .parse::<f64>()
        .ok()
        .filter(|s| *s > 0.0 && s.is_finite())
        .ok_or(KittiError::NumericParse {
            line: 1,
            text: value.to_string(),
        })
}

/// Reads a feature map; `stride` overrides the sidecar file when given.
pub fn read_tensor(path: impl AsRef<Path>, stride: Option<f64>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let stride = match stride {
        Some(s) => s,
        None => read_stride_sidecar(path)?,
    };
    parse_tensor(&read_file(path)?, stride)
}

fn encode_npy(shape: &[usize], descr: &str, payload: &[u8]) -> Vec<u8> {
    let dims = match shape.len() {
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {dims}, }}");
    // Preamble (10 bytes) + header + newline is padded to a multiple of 64.
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn write_npy(path: impl AsRef<Path>, shape: &[usize], data: &NpyData) -> Result<()> {
    assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
    let (descr, payload): (&str, Vec<u8>) = match data {
        NpyData::F32(v) => ("<f4", v.iter().flat_map(|x| x.to_le_bytes()).collect()),
        NpyData::F64(v) => ("<f8", v.iter().flat_map(|x| x.to_le_bytes()).collect()),
    };
    write_file(path.as_ref(), &encode_npy(shape, descr, &payload))
}

/// Writes the map as NPY plus its `.stride` sidecar.
pub fn write_tensor(path: impl AsRef<Path>, map: &FeatureMap) -> Result<()> {
    let path = path.as_ref();
    write_npy(
        path,
        &[map.channels, map.height, map.width],
        &NpyData::F32(map.data.clone()),
    )?;
    write_file(&sidecar_path(path), format!("stride: {}\n", map.stride).as_bytes())
}
