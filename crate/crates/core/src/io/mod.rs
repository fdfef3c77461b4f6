//! File formats: PFM rasters, OSB1 parameters, fixation and loss CSV, and
//! 8-bit PNG input.

pub mod fixations;
pub mod osb1;
pub mod pfm;

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

fn is_pfm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"))
}

fn luminance<T: Real>(rgb: &Grid<T>) -> Grid<T> {
    let (wr, wg, wb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
    Grid::from_fn(rgb.rows(), rgb.cols(), |r, c| {
        wr * rgb.get(r, c, 0) + wg * rgb.get(r, c, 1) + wb * rgb.get(r, c, 2)
    })
}

/// Load an image as a single-channel map. PFM values are taken as is
/// (RGB is reduced to luminance); other formats are decoded to 8-bit grey
/// and scaled to `[0, 1]`.
pub fn read_image<T: Real>(path: impl AsRef<Path>) -> Result<Grid<T>> {
    let path = path.as_ref();
    if is_pfm(path) {
        let g: Grid<T> = pfm::read(path)?.cast();
        return Ok(if g.channels() == 3 { luminance(&g) } else { g });
    }
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            format: "image",
            reason: format!("{}: {other}", path.display()),
        },
    })?;
    let grey = img.to_luma8();
    let (w, h) = (grey.width() as usize, grey.height() as usize);
    let scale = T::lit(1.0 / 255.0);
    let data = grey.into_raw().into_iter().map(|v| T::lit(v as f64) * scale).collect();
    Grid::from_vec(h, w, 1, data)
}

/// 8-bit greyscale PNG of `map` scaled so its maximum is 255.
pub fn encode_png<T: Real>(map: &Grid<T>) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    if map.channels() != 1 {
        return Err(Error::shape("single-channel map", map.shape_str()));
    }
    let max = map.max_value();
    let scale = if max > T::zero() { T::lit(255.0) / max } else { T::zero() };
    let pixels: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (v * scale).round().max(T::zero()).min(T::lit(255.0)).to_u8().unwrap_or(0))
        .collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&pixels, map.cols() as u32, map.rows() as u32, image::ExtendedColorType::L8)
        .map_err(|e| Error::Format {
            format: "PNG",
            reason: e.to_string(),
        })?;
    Ok(out)
}

pub fn write_png<T: Real>(path: impl AsRef<Path>, map: &Grid<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(map)?).map_err(|e| Error::io(path, e))
}

/// `step,loss` rows, one per optimizer step.
pub fn loss_csv<T: Real>(losses: &[T]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l.to_f64_lossy()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_pfm_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let m = Grid::from_fn(4, 6, |r, c| (r * 6 + c) as f64);
        let png = dir.path().join("m.png");
        write_png(&png, &m).unwrap();
        let back: Grid<f64> = read_image(&png).unwrap();
        assert_eq!((back.rows(), back.cols()), (4, 6));
        assert_eq!(back.get(3, 5, 0), 1.0);
        assert_eq!(back.get(0, 0, 0), 0.0);

        let rgb = Grid::from_vec(1, 1, 3, vec![1.0f32, 1.0, 1.0]).unwrap();
        let p = dir.path().join("c.PFM");
        pfm::write(&p, &rgb).unwrap();
        let g: Grid<f64> = read_image(&p).unwrap();
        assert!((g.get(0, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_image_is_io_error() {
        let r = read_image::<f64>("/nonexistent/x.png");
        assert!(matches!(r, Err(Error::Io { .. })));
    }

    #[test]
    fn loss_rows() {
        assert_eq!(loss_csv(&[0.5f64, 0.25]), "step,loss\n1,0.5\n2,0.25\n");
    }
}
