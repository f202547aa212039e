use std::path::Path;

use super::{read_file, write_file, KittiError, Result};

/// 8-bit RGB image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Channel value rescaled to `[0, 1]`.
    pub fn value(&self, x: usize, y: usize, channel: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + channel] as f64 / 255.0
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|c| *c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| KittiError::BadHeader(format!("invalid {what}")))
    }
}

/// Decodes a binary (P6) PPM with maxval 255.
pub fn parse_image(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(KittiError::BadMagic);
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(KittiError::BadHeader(format!("maxval {maxval} (only 255 is supported)")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(KittiError::BadHeader("missing separator after maxval".into())),
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| KittiError::BadHeader("image size overflows".into()))?;
    let pixels = &bytes[h.pos..];
    if pixels.len() < expected {
        return Err(KittiError::TruncatedPixelData {
            expected,
            found: pixels.len(),
        });
    }
    Ok(Image {
        width,
        height,
        data: pixels[..expected].to_vec(),
    })
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    parse_image(&read_file(path.as_ref())?)
}

pub fn write_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    write_file(path.as_ref(), &image.to_ppm_bytes())
}
