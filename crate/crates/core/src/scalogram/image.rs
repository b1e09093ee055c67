use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scalogram;
use crate::ingest::sidecar_path;
use crate::{Error, Result};

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape {
                expected: vec![height, width],
                actual: vec![pixels.len()],
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn is_black(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0)
    }
}

/// Min-max map to `[0, 255]`, rounding half up. A constant matrix renders black.
pub fn to_grayscale(s: &Scalogram) -> GrayImage {
    let (lo, hi) = s
        .coeffs()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let pixels = if range > 0.0 {
        s.coeffs()
            .iter()
            .map(|&v| ((v - lo) * 255.0 / range + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0; s.coeffs().len()]
    };
    GrayImage {
        width: s.cols(),
        height: s.rows(),
        pixels,
    }
}

/// Binary P5, maxval 255.
pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let fail = |offset: usize, message: &str| Error::Format {
        format: "pgm",
        offset: offset as u64,
        message: message.into(),
    };
    // magic, width, height, maxval separated by whitespace; '#' comments allowed
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail(pos, "truncated header"));
        }
        fields.push((start, std::str::from_utf8(&bytes[start..pos]).unwrap_or("")));
    }
    if fields[0].1 != "P5" {
        return Err(fail(0, "not a binary (P5) pgm"));
    }
    let num = |(at, s): (usize, &str)| s.parse::<usize>().map_err(|_| fail(at, "bad header number"));
    let width = num(fields[1])?;
    let height = num(fields[2])?;
    if num(fields[3])? != 255 {
        return Err(fail(fields[3].0, "only maxval 255 is supported"));
    }
    // exactly one whitespace byte after maxval
    pos += 1;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != width * height {
        return Err(fail(pos, "payload size does not match header"));
    }
    GrayImage::new(width, height, payload.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F32Sidecar {
    pub rows: usize,
    pub cols: usize,
    pub scales: Vec<f64>,
    pub fs: f64,
}

/// Row-major little-endian f32 payload plus a `<name>.json` sidecar.
pub fn write_f32(s: &Scalogram, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(s.coeffs().len() * 4);
    for &v in s.coeffs() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let side = F32Sidecar {
        rows: s.rows(),
        cols: s.cols(),
        scales: s.scales().to_vec(),
        fs: s.fs(),
    };
    let side_path = sidecar_path(path);
    fs::write(&side_path, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&side_path, e))
}

pub fn read_f32(path: &Path) -> Result<Scalogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side_path = sidecar_path(path);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: F32Sidecar = serde_json::from_str(&text)?;
    if bytes.len() != side.rows * side.cols * 4 {
        return Err(Error::Format {
            format: "f32",
            offset: bytes.len() as u64,
            message: format!("expected {} bytes for {}x{}", side.rows * side.cols * 4, side.rows, side.cols),
        });
    }
    let coeffs = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Scalogram::new(coeffs, side.rows, side.cols, side.scales, side.fs)
}
