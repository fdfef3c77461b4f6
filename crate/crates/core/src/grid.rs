//! Dense row-major rasters.
//!
//! A [`Grid`] stores `rows × cols × channels` values with channels interleaved
//! per pixel. The same type backs equirectangular maps, tangent patches, bias
//! channels and attention activations.

use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self::filled(rows, cols, channels, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, channels: usize, value: T) -> Self {
        Grid {
            rows,
            cols,
            channels,
            data: vec![value; rows * cols * channels],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::shape(
                format!("{} values for {rows}x{cols}x{channels}", rows * cols * channels),
                data.len(),
            ));
        }
        Ok(Grid {
            rows,
            cols,
            channels,
            data,
        })
    }

    /// Single-channel grid from a closure over `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid {
            rows,
            cols,
            channels: 1,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.cols + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: T) {
        let i = self.index(row, col, ch);
        self.data[i] = v;
    }

    pub fn same_shape(&self, other: &Grid<T>) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.channels == other.channels
    }

    pub fn shape_str(&self) -> String {
        format!("{}x{}x{}", self.rows, self.cols, self.channels)
    }

    pub fn ensure_same_shape(&self, other: &Grid<T>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(self.shape_str(), other.shape_str()))
        }
    }

    /// Extract one channel as a single-channel grid.
    pub fn channel(&self, ch: usize) -> Grid<T> {
        let data = self.data.iter().skip(ch).step_by(self.channels).copied().collect();
        Grid {
            rows: self.rows,
            cols: self.cols,
            channels: 1,
            data,
        }
    }

    /// Stack single-channel grids into one multi-channel grid.
    pub fn stack(planes: &[Grid<T>]) -> Result<Grid<T>> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero planes"))?;
        let (rows, cols) = (first.rows, first.cols);
        for p in planes {
            if p.rows != rows || p.cols != cols || p.channels != 1 {
                return Err(Error::shape(format!("{rows}x{cols}x1"), p.shape_str()));
            }
        }
        let n = planes.len();
        let mut data = vec![T::zero(); rows * cols * n];
        for (k, p) in planes.iter().enumerate() {
            for (i, &v) in p.data.iter().enumerate() {
                data[i * n + k] = v;
            }
        }
        Ok(Grid {
            rows,
            cols,
            channels: n,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Grid<T> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        pairwise_sum(&self.data)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row and column of the largest value in channel 0. Ties resolve to the first.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for i in 0..self.pixels() {
            if self.data[i * self.channels] > self.data[best * self.channels] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    /// Convert to another scalar type.
    pub fn cast<U: Real>(&self) -> Grid<U> {
        Grid {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }

    /// Check the saliency invariant: finite and non-negative everywhere.
    pub fn ensure_saliency(&self, what: &str) -> Result<()> {
        for &v in &self.data {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::InvalidSaliency(format!(
                    "{what} contains {v}; saliency must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Bilinear sample of one channel at continuous pixel-center coordinates,
    /// clamping to the border.
    pub fn sample_clamped(&self, x: T, y: T, ch: usize) -> T {
        let maxx = T::from_usize_lossy(self.cols - 1);
        let maxy = T::from_usize_lossy(self.rows - 1);
        let x = x.max(T::zero()).min(maxx);
        let y = y.max(T::zero()).min(maxy);
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let c0 = x0.to_usize().unwrap_or(0);
        let r0 = y0.to_usize().unwrap_or(0);
        let c1 = (c0 + 1).min(self.cols - 1);
        let r1 = (r0 + 1).min(self.rows - 1);
        let top = self.get(r0, c0, ch) * (T::one() - fx) + self.get(r0, c1, ch) * fx;
        let bot = self.get(r1, c0, ch) * (T::one() - fx) + self.get(r1, c1, ch) * fx;
        top * (T::one() - fy) + bot * fy
    }

    /// Bilinear resize of every channel with pixel-center alignment.
    pub fn resize_bilinear(&self, rows: usize, cols: usize) -> Grid<T> {
        let sy = T::from_usize_lossy(self.rows) / T::from_usize_lossy(rows);
        let sx = T::from_usize_lossy(self.cols) / T::from_usize_lossy(cols);
        let half = T::lit(0.5);
        let mut out = Grid::zeros(rows, cols, self.channels);
        for r in 0..rows {
            let y = (T::from_usize_lossy(r) + half) * sy - half;
            for c in 0..cols {
                let x = (T::from_usize_lossy(c) + half) * sx - half;
                for ch in 0..self.channels {
                    out.set(r, c, ch, self.sample_clamped(x, y, ch));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stack_and_channel_are_inverse() {
        let a = Grid::from_fn(2, 3, |r, c| (r * 3 + c) as f64);
        let b = a.map(|v| -v);
        let s = Grid::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.channels(), 2);
        assert_eq!(s.channel(0), a);
        assert_eq!(s.channel(1), b);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(matches!(
            Grid::<f64>::from_vec(2, 2, 1, vec![0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bilinear_sample_midpoint() {
        let g = Grid::from_vec(1, 2, 1, vec![1.0f64, 3.0]).unwrap();
        assert_eq!(g.sample_clamped(0.5, 0.0, 0), 2.0);
        assert_eq!(g.sample_clamped(-4.0, 0.0, 0), 1.0);
        assert_eq!(g.sample_clamped(9.0, 0.0, 0), 3.0);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let g = Grid::<f64>::filled(7, 5, 2, 0.25);
        let r = g.resize_bilinear(13, 11);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn negative_values_fail_saliency_check() {
        let g = Grid::from_vec(1, 2, 1, vec![0.5f32, -0.1]).unwrap();
        assert!(g.ensure_saliency("map").is_err());
    }
}
