//! `HSC1` cube files and headerless CSV matrices.
//!
//! Cube layout: `b"HSC1"`, then `u32` LE bands, height, width, then
//! `bands * height * width` little-endian `f32` values, band-major then
//! row-major. Samples are held as `f64` in memory and narrowed to `f32` on
//! save, so a cube loaded from disk re-saves to identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::{HyperCube, SpectrumBatch};
use crate::error::{Error, Result};

const CUBE_MAGIC: [u8; 4] = *b"HSC1";
const HEADER_LEN: usize = 16;

pub(crate) fn encode_cube(cube: &HyperCube) -> Vec<u8> {
    let (b, h, w) = cube.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * b * h * w);
    out.extend_from_slice(&CUBE_MAGIC);
    for d in [b, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in cube.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub(crate) fn decode_cube(bytes: &[u8]) -> Result<HyperCube> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != CUBE_MAGIC {
        return Err(Error::BadMagic {
            expected: CUBE_MAGIC,
            found: magic,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (b, h, w) = (dim(0), dim(1), dim(2));
    if b == 0 || h == 0 || w == 0 {
        return Err(Error::Malformed(format!("zero dimension {b}x{h}x{w}")));
    }
    let payload = b
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::DimensionOverflow(format!("{b}x{h}x{w}")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::TruncatedPayload {
            expected: payload,
            found: body.len(),
        });
    }
    if body.len() > payload {
        return Err(Error::Malformed(format!(
            "{} trailing bytes after payload",
            body.len() - payload
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    HyperCube::from_vec(b, h, w, values)
}

pub fn save_cube(cube: &HyperCube, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_cube(cube))?;
    Ok(())
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HyperCube> {
    decode_cube(&fs::read(path)?)
}

fn format_rows<'a>(rows: impl Iterator<Item = ndarray::ArrayView1<'a, f64>>) -> String {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn parse_rows(text: &str) -> Result<Array2<f64>> {
    let mut cols = None;
    let mut values = Vec::new();
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Malformed(format!("line {}: cannot parse {field:?}", lineno + 1))
            })?;
            values.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(Error::Malformed(format!(
                    "line {}: {n} fields, expected {c}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Malformed("empty csv".into()))?;
    Ok(Array2::from_shape_vec((rows, cols), values).expect("counted"))
}

/// Headerless CSV, one matrix row per line.
pub fn save_matrix_csv(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_rows(m.rows().into_iter()).as_bytes())?;
    Ok(())
}

pub fn load_matrix_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    parse_rows(&fs::read_to_string(path)?)
}

pub fn save_spectra_csv(batch: &SpectrumBatch, path: impl AsRef<Path>) -> Result<()> {
    save_matrix_csv(batch.data(), path)
}

pub fn load_spectra_csv(path: impl AsRef<Path>) -> Result<SpectrumBatch> {
    SpectrumBatch::new(load_matrix_csv(path)?)
}
