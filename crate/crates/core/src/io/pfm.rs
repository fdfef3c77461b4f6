//! Portable float map: `Pf` (grey) or `PF` (RGB) header, width and height,
//! a scale whose sign gives the byte order, then rows bottom to top.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "PFM",
        reason: reason.into(),
    }
}

/// Little-endian encoding with scale −1.0. Values are stored as `f32`.
pub fn encode<T: Real>(map: &Grid<T>) -> Result<Vec<u8>> {
    let tag = match map.channels() {
        1 => "Pf",
        3 => "PF",
        n => return Err(Error::shape("1 or 3 channels", n)),
    };
    let (rows, cols, ch) = (map.rows(), map.cols(), map.channels());
    let mut out = format!("{tag}\n{cols} {rows}\n-1.0\n").into_bytes();
    out.reserve(rows * cols * ch * 4);
    for r in (0..rows).rev() {
        let start = r * cols * ch;
        for &v in &map.data()[start..start + cols * ch] {
            let f = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(bad("truncated header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| bad("non-ASCII header"))
}

pub fn decode(bytes: &[u8]) -> Result<Grid<f32>> {
    let mut pos = 0;
    let channels = match next_token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(bad(format!("unknown magic {other:?}"))),
    };
    let cols: usize = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| bad("bad width"))?;
    let rows: usize = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| bad("bad height"))?;
    let scale: f64 = next_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    // exactly one whitespace byte separates header and payload
    pos += 1;
    let n = rows * cols * channels;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() != n * 4 {
        return Err(bad(format!(
            "expected {} payload bytes, found {}",
            n * 4,
            payload.len()
        )));
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; n];
    let row_len = cols * channels;
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let file_row = i / row_len;
        data[(rows - 1 - file_row) * row_len + i % row_len] = v;
    }
    Grid::from_vec(rows, cols, channels, data)
}

pub fn read(path: impl AsRef<Path>) -> Result<Grid<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write<T: Real>(path: impl AsRef<Path>, map: &Grid<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(map)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
