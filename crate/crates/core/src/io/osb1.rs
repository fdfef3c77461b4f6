//! OSB1 parameter files. All integers are little-endian `u32`, all
//! parameters little-endian `f64`. The byte layout is listed in FORMATS.md.

use std::path::Path;

use crate::bias::BiasGrid;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::multiscale::{Arch, AttentionParams, Conv2d};
use crate::scalar::Real;

pub const MAGIC: &[u8; 4] = b"OSB1";
pub const KIND_BIAS: u32 = 1;
pub const KIND_ATTENTION: u32 = 2;

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        format: "OSB1",
        reason: reason.into(),
    }
}

/// Parameters stored in an OSB1 file.
#[derive(Clone, Debug, PartialEq)]
pub enum Params<T> {
    Bias(BiasGrid<T>),
    Attention(AttentionParams<T>),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| bad("dimension exceeds u32"))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn f64<T: Real>(&mut self, v: T) {
        self.0.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("unexpected end of data"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f64s<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("payload too large"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

pub fn encode_bias<T: Real>(bias: &BiasGrid<T>) -> Result<Vec<u8>> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(KIND_BIAS as usize)?;
    w.u32(bias.channels())?;
    w.u32(bias.grid_rows())?;
    w.u32(bias.grid_cols())?;
    for &e in bias.elevations() {
        w.f64(e);
    }
    for k in 0..bias.channels() {
        for v in bias.plane(k) {
            w.f64(v);
        }
    }
    Ok(w.0)
}

pub fn encode_attention<T: Real>(params: &AttentionParams<T>) -> Result<Vec<u8>> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(KIND_ATTENTION as usize)?;
    w.u32(params.arch.number() as usize)?;
    w.u32(params.layers.len())?;
    for l in &params.layers {
        for d in [l.out_ch, l.in_ch, l.kh, l.kw, l.pad_top, l.pad_left] {
            w.u32(d)?;
        }
    }
    for l in &params.layers {
        for &v in l.weight.iter().chain(&l.bias) {
            w.f64(v);
        }
    }
    Ok(w.0)
}

pub fn encode<T: Real>(params: &Params<T>) -> Result<Vec<u8>> {
    match params {
        Params::Bias(b) => encode_bias(b),
        Params::Attention(a) => encode_attention(a),
    }
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Params<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("missing OSB1 magic"));
    }
    let kind = r.u32()? as u32;
    let params = match kind {
        KIND_BIAS => {
            let k = r.u32()?;
            let gh = r.u32()?;
            let gw = r.u32()?;
            if k == 0 || gh == 0 || gw == 0 {
                return Err(bad("bias dimensions must be positive"));
            }
            let need = k
                .checked_mul(gh)
                .and_then(|n| n.checked_mul(gw))
                .and_then(|n| n.checked_add(k))
                .and_then(|n| n.checked_mul(8));
            if need.is_none_or(|n| n > bytes.len() - r.pos) {
                return Err(bad("payload shorter than declared dimensions"));
            }
            let elevations = r.f64s(k)?;
            let mut weights = Grid::zeros(gh, gw, k);
            for ch in 0..k {
                let plane: Vec<T> = r.f64s(gh * gw)?;
                for (i, v) in plane.into_iter().enumerate() {
                    weights.set(i / gw, i % gw, ch, v);
                }
            }
            Params::Bias(BiasGrid::from_parts(weights, elevations)?)
        }
        KIND_ATTENTION => {
            let arch = Arch::try_from(u8::try_from(r.u32()?).unwrap_or(0))?;
            let n = r.u32()?;
            if n > 64 {
                return Err(bad(format!("implausible layer count {n}")));
            }
            let mut layers = Vec::with_capacity(n);
            for _ in 0..n {
                let (out_ch, in_ch, kh, kw) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
                let (pad_top, pad_left) = (r.u32()?, r.u32()?);
                if out_ch == 0 || in_ch == 0 || kh == 0 || kw == 0 {
                    return Err(bad("layer dimensions must be positive"));
                }
                if out_ch > 1 << 16 || in_ch > 1 << 16 || kh > 64 || kw > 64 {
                    return Err(bad(format!("implausible layer shape {out_ch}x{in_ch}x{kh}x{kw}")));
                }
                if (out_ch * in_ch * kh * kw + out_ch) * 8 > bytes.len() - r.pos {
                    return Err(bad("payload shorter than declared layers"));
                }
                let layer = Conv2d::zeros(out_ch, in_ch, kh, kw);
                if (layer.pad_top, layer.pad_left) != (pad_top, pad_left) {
                    return Err(bad(format!(
                        "padding ({pad_top},{pad_left}) does not give same-size output for a {kh}x{kw} kernel"
                    )));
                }
                layers.push(layer);
            }
            for l in &mut layers {
                l.weight = r.f64s(l.weight.len())?;
                l.bias = r.f64s(l.bias.len())?;
            }
            Params::Attention(AttentionParams::from_layers(arch, layers)?)
        }
        other => return Err(bad(format!("unknown kind {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

pub fn read<T: Real>(path: impl AsRef<Path>) -> Result<Params<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn read_bias<T: Real>(path: impl AsRef<Path>) -> Result<BiasGrid<T>> {
    match read(path)? {
        Params::Bias(b) => Ok(b),
        Params::Attention(_) => Err(bad("expected bias parameters, found attention")),
    }
}

pub fn read_attention<T: Real>(path: impl AsRef<Path>) -> Result<AttentionParams<T>> {
    match read(path)? {
        Params::Attention(a) => Ok(a),
        Params::Bias(_) => Err(bad("expected attention parameters, found bias")),
    }
}

pub fn write<T: Real>(path: impl AsRef<Path>, params: &Params<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
