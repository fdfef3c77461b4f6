//! Multiplicative position priors (center / equator bias) and L1
//! normalization.
//!
//! A bias grid is a coarse `gh × gw` field with one channel per viewing
//! elevation. The channel matching a patch's elevation is bilinearly
//! upsampled to patch resolution and multiplied into the raw saliency.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

/// Lower bound enforced on bias weights after every update.
pub const BIAS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct BiasGrid<T> {
    /// `gh × gw × K`
    weights: Grid<T>,
    elevations: Vec<T>,
}

impl<T: Real> BiasGrid<T> {
    /// All-ones grid (identity prior).
    pub fn ones(gh: usize, gw: usize, elevations: Vec<T>) -> Result<Self> {
        if gh == 0 || gw == 0 || elevations.is_empty() {
            return Err(Error::invalid("bias grid needs gh, gw, K >= 1"));
        }
        Ok(BiasGrid {
            weights: Grid::filled(gh, gw, elevations.len(), T::one()),
            elevations,
        })
    }

    /// Single-channel center bias at elevation 0.
    pub fn single(gh: usize, gw: usize) -> Self {
        Self::ones(gh, gw, vec![T::zero()]).expect("valid size")
    }

    /// Five-channel equator bias for elevations −90°, −45°, 0°, 45°, 90°.
    pub fn equator(gh: usize, gw: usize) -> Self {
        let els = [-90.0, -45.0, 0.0, 45.0, 90.0]
            .iter()
            .map(|d: &f64| T::lit(d.to_radians()))
            .collect();
        Self::ones(gh, gw, els).expect("valid size")
    }

    pub fn from_parts(weights: Grid<T>, elevations: Vec<T>) -> Result<Self> {
        if weights.channels() != elevations.len() || weights.is_empty() {
            return Err(Error::shape(
                format!("{} channels", elevations.len()),
                weights.shape_str(),
            ));
        }
        for &w in weights.data() {
            if !w.is_finite() || w < T::zero() {
                return Err(Error::invalid(format!("bias weight {w} must be finite and >= 0")));
            }
        }
        Ok(BiasGrid {
            weights,
            elevations,
        })
    }

    pub fn grid_rows(&self) -> usize {
        self.weights.rows()
    }

    pub fn grid_cols(&self) -> usize {
        self.weights.cols()
    }

    pub fn channels(&self) -> usize {
        self.elevations.len()
    }

    pub fn elevations(&self) -> &[T] {
        &self.elevations
    }

    pub fn weights(&self) -> &Grid<T> {
        &self.weights
    }

    /// Values of one channel in row-major order.
    pub fn plane(&self, k: usize) -> Vec<T> {
        self.weights.channel(k).into_vec()
    }

    pub fn set_plane(&mut self, k: usize, values: &[T]) {
        let n = self.channels();
        for (i, &v) in values.iter().enumerate() {
            self.weights.data_mut()[i * n + k] = v;
        }
    }

    /// Mean weight of each channel.
    pub fn channel_means(&self) -> Vec<T> {
        (0..self.channels())
            .map(|k| {
                let p = self.plane(k);
                p.iter().copied().sum::<T>() / T::from_usize_lossy(p.len())
            })
            .collect()
    }

    pub fn clamp_min(&mut self, floor: T) {
        for w in self.weights.data_mut() {
            if *w < floor {
                *w = floor;
            }
        }
    }

    /// Channel whose elevation is nearest; ties go to the equator-ward channel.
    pub fn select_channel(&self, elevation: T) -> usize {
        let tol = T::lit(1e-12);
        let mut best = 0;
        for (k, &e) in self.elevations.iter().enumerate().skip(1) {
            let d = (e - elevation).abs();
            let db = (self.elevations[best] - elevation).abs();
            if d < db - tol || ((d - db).abs() <= tol && e.abs() < self.elevations[best].abs()) {
                best = k;
            }
        }
        best
    }

    /// Multiply the channel for `elevation`, upsampled to the raw patch size.
    pub fn apply(&self, raw: &Grid<T>, elevation: T) -> Result<Grid<T>> {
        let k = self.select_channel(elevation);
        apply_plane(raw, &self.plane(k), self.grid_rows(), self.grid_cols())
    }
}

/// Bilinear interpolation weights from `n_in` cell centers to `n_out` pixel
/// centers: `(i0, i1, t)` meaning `(1 − t)·v[i0] + t·v[i1]`.
pub fn upsample_weights<T: Real>(n_in: usize, n_out: usize) -> Vec<(usize, usize, T)> {
    let half = T::lit(0.5);
    let scale = T::from_usize_lossy(n_in) / T::from_usize_lossy(n_out);
    let maxp = T::from_usize_lossy(n_in - 1);
    (0..n_out)
        .map(|o| {
            let p = ((T::from_usize_lossy(o) + half) * scale - half).max(T::zero()).min(maxp);
            let i0 = p.floor().to_usize().unwrap_or(0);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, p - T::from_usize_lossy(i0))
        })
        .collect()
}

/// Bilinear upsampling of a `gh × gw` plane to `rows × cols`.
pub fn upsample_plane<T: Real>(plane: &[T], gh: usize, gw: usize, rows: usize, cols: usize) -> Grid<T> {
    let wy = upsample_weights::<T>(gh, rows);
    let wx = upsample_weights::<T>(gw, cols);
    Grid::from_fn(rows, cols, |r, c| {
        let (y0, y1, ty) = wy[r];
        let (x0, x1, tx) = wx[c];
        let top = plane[y0 * gw + x0] * (T::one() - tx) + plane[y0 * gw + x1] * tx;
        let bot = plane[y1 * gw + x0] * (T::one() - tx) + plane[y1 * gw + x1] * tx;
        top * (T::one() - ty) + bot * ty
    })
}

/// `raw ⊙ upsample(plane)`.
pub fn apply_plane<T: Real>(raw: &Grid<T>, plane: &[T], gh: usize, gw: usize) -> Result<Grid<T>> {
    if raw.channels() != 1 {
        return Err(Error::shape("single-channel saliency", raw.shape_str()));
    }
    if plane.len() != gh * gw {
        return Err(Error::shape(gh * gw, plane.len()));
    }
    let up = upsample_plane(plane, gh, gw, raw.rows(), raw.cols());
    let data = raw.data().iter().zip(up.data()).map(|(&a, &b)| a * b).collect();
    Grid::from_vec(raw.rows(), raw.cols(), 1, data)
}

/// Gradient of a loss w.r.t. the bias plane, given `grad_out = ∂L/∂(raw ⊙ up)`.
pub fn plane_gradient<T: Real>(raw: &Grid<T>, grad_out: &Grid<T>, gh: usize, gw: usize) -> Vec<T> {
    let (rows, cols) = (raw.rows(), raw.cols());
    let wy = upsample_weights::<T>(gh, rows);
    let wx = upsample_weights::<T>(gw, cols);
    // Contract columns first, then rows.
    let mut t = vec![T::zero(); rows * gw];
    for r in 0..rows {
        for c in 0..cols {
            let g = grad_out.get(r, c, 0) * raw.get(r, c, 0);
            let (x0, x1, tx) = wx[c];
            t[r * gw + x0] += g * (T::one() - tx);
            t[r * gw + x1] += g * tx;
        }
    }
    let mut out = vec![T::zero(); gh * gw];
    for r in 0..rows {
        let (y0, y1, ty) = wy[r];
        for b in 0..gw {
            out[y0 * gw + b] += t[r * gw + b] * (T::one() - ty);
            out[y1 * gw + b] += t[r * gw + b] * ty;
        }
    }
    out
}

/// Divide by the plain pixel sum.
pub fn l1_normalize<T: Real>(map: &Grid<T>) -> Result<Grid<T>> {
    map.ensure_saliency("map to normalize")?;
    let s = map.sum();
    if !(s > T::zero()) {
        return Err(Error::degenerate("cannot L1-normalize an all-zero map"));
    }
    Ok(map.map(|v| v / s))
}

/// Divide by the solid-angle-weighted sum `Σ w·s`, so that `Σ w·s' = 1`.
pub fn l1_normalize_weighted<T: Real>(map: &Grid<T>, weights: &Grid<T>) -> Result<Grid<T>> {
    map.ensure_saliency("map to normalize")?;
    if map.rows() != weights.rows() || map.cols() != weights.cols() {
        return Err(Error::shape(map.shape_str(), weights.shape_str()));
    }
    let prod: Vec<T> = map.data().iter().zip(weights.data()).map(|(&a, &b)| a * b).collect();
    let s = crate::scalar::pairwise_sum(&prod);
    if !(s > T::zero()) {
        return Err(Error::degenerate("cannot L1-normalize an all-zero map"));
    }
    Ok(map.map(|v| v / s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    #[test]
    fn channel_selection() {
        let b = BiasGrid::<f64>::equator(4, 4);
        let zero = 2;
        assert_eq!(b.select_channel(0.0), zero);
        assert_eq!(b.elevations()[b.select_channel(deg(30.0))], deg(45.0));
        assert_eq!(b.select_channel(deg(22.5)), zero);
        assert_eq!(b.select_channel(deg(-22.5)), zero);
        assert_eq!(b.elevations()[b.select_channel(deg(-67.5))], deg(-45.0));
        assert_eq!(b.elevations()[b.select_channel(deg(89.0))], deg(90.0));
        assert_eq!(BiasGrid::<f64>::single(2, 2).select_channel(1.0), 0);
    }

    #[test]
    fn ones_is_identity() {
        let raw = Grid::from_fn(9, 7, |r, c| (r * 7 + c) as f64 / 3.0);
        let b = BiasGrid::<f64>::equator(20, 20);
        let out = b.apply(&raw, 0.3).unwrap();
        for (a, o) in raw.data().iter().zip(out.data()) {
            assert!((a - o).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn uniform_bias_vanishes_after_normalization() {
        let raw = Grid::from_fn(8, 8, |r, c| ((r * 3 + c) % 5) as f64 + 0.5);
        let plane = vec![3.5; 16];
        let out = apply_plane(&raw, &plane, 4, 4).unwrap();
        for (a, o) in raw.data().iter().zip(out.data()) {
            assert!((3.5 * a - o).abs() < 1e-12);
        }
        let na = l1_normalize(&raw).unwrap();
        let no = l1_normalize(&out).unwrap();
        for (a, o) in na.data().iter().zip(no.data()) {
            assert!((a - o).abs() < 1e-15);
        }
    }

    #[test]
    fn hot_cell_makes_local_bump() {
        // 20x20 grid, cell (5, 12) hot, upsampled to 100x100: the peak covers
        // pixels whose center maps to grid coordinate (5, 12), i.e. pixel
        // (5.5·5 − 0.5, 12.5·5 − 0.5) = (27, 62).
        let mut plane = vec![0.0; 400];
        plane[5 * 20 + 12] = 1.0;
        let up = upsample_plane(&plane, 20, 20, 100, 100);
        // Oracle: tent function of the distance to the cell center in grid units.
        for r in 0..100 {
            for c in 0..100 {
                let gy = ((r as f64 + 0.5) / 5.0 - 0.5).clamp(0.0, 19.0);
                let gx = ((c as f64 + 0.5) / 5.0 - 0.5).clamp(0.0, 19.0);
                let expected = (1.0 - (gy - 5.0).abs()).max(0.0) * (1.0 - (gx - 12.0).abs()).max(0.0);
                assert!((up.get(r, c, 0) - expected).abs() < 1e-12);
            }
        }
        assert_eq!(up.get(27, 62, 0), 1.0);
        assert_eq!(up.get(0, 0, 0), 0.0);
    }

    #[test]
    fn plane_gradient_matches_finite_differences() {
        let raw = Grid::from_fn(7, 9, |r, c| ((r * 5 + c * 3) % 7) as f64 * 0.3 + 0.1);
        let g = Grid::from_fn(7, 9, |r, c| ((r + 2 * c) % 5) as f64 - 2.0);
        let (gh, gw) = (3, 4);
        let plane: Vec<f64> = (0..12).map(|i| 0.5 + 0.1 * i as f64).collect();
        let f = |p: &[f64]| -> f64 {
            let o = apply_plane(&raw, p, gh, gw).unwrap();
            o.data().iter().zip(g.data()).map(|(a, b)| a * b).sum()
        };
        let an = plane_gradient(&raw, &g, gh, gw);
        for i in 0..12 {
            let mut p = plane.clone();
            p[i] += 1e-5;
            let fp = f(&p);
            p[i] -= 2e-5;
            let fm = f(&p);
            let num = (fp - fm) / 2e-5;
            assert!((num - an[i]).abs() <= 1e-6 * num.abs().max(1.0));
        }
    }

    #[test]
    fn l1_cases() {
        let g = Grid::from_vec(1, 2, 1, vec![2.0f64, 2.0]).unwrap();
        assert_eq!(l1_normalize(&g).unwrap().data(), &[0.5, 0.5]);
        let z = Grid::<f64>::zeros(2, 2, 1);
        assert!(matches!(l1_normalize(&z), Err(Error::Degenerate(_))));
        let w = crate::geometry::solid_angle_weights::<f64>(4, 8).unwrap();
        let m = Grid::from_fn(4, 8, |r, c| (r + c) as f64 + 1.0);
        let n = l1_normalize_weighted(&m, &w).unwrap();
        let s: f64 = n.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamp_enforces_floor() {
        let mut b = BiasGrid::<f64>::single(2, 2);
        b.set_plane(0, &[-1.0, 0.0, 0.5, 2.0]);
        b.clamp_min(BIAS_FLOOR);
        assert_eq!(b.plane(0), vec![BIAS_FLOOR, BIAS_FLOOR, 0.5, 2.0]);
    }

    proptest! {
        #[test]
        fn l1_normalization_properties(vals in proptest::collection::vec(0.0f64..10.0, 16), scale in 0.01f64..100.0) {
            prop_assume!(vals.iter().sum::<f64>() > 1e-3);
            let g = Grid::from_vec(4, 4, 1, vals).unwrap();
            let n = l1_normalize(&g).unwrap();
            prop_assert!((n.sum() - 1.0).abs() <= 1e-12);
            let nn = l1_normalize(&n).unwrap();
            for (a, b) in n.data().iter().zip(nn.data()) {
                prop_assert!((a - b).abs() <= 1e-15);
            }
            let ns = l1_normalize(&g.map(|v| v * scale)).unwrap();
            for (a, b) in n.data().iter().zip(ns.data()) {
                prop_assert!((a - b).abs() <= 1e-14);
            }
            prop_assert_eq!(ns.argmax(), n.argmax());
        }
    }
}
