//! Overlapping patch extraction from ERP rasters and nearest-point
//! reprojection with overlap averaging.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{erp_to_sphere, sphere_to_erp, Direction, ViewFrustum};
use crate::grid::Grid;
use crate::scalar::Real;

/// An undistorted tangent-plane raster (`height × width × channels`).
#[derive(Clone, Debug, PartialEq)]
pub struct Patch<T> {
    pub frustum: ViewFrustum<T>,
    pub data: Grid<T>,
}

impl<T: Real> Patch<T> {
    pub fn new(frustum: ViewFrustum<T>, data: Grid<T>) -> Result<Self> {
        if data.rows() != frustum.height() || data.cols() != frustum.width() {
            return Err(Error::shape(
                format!("{}x{}", frustum.height(), frustum.width()),
                format!("{}x{}", data.rows(), data.cols()),
            ));
        }
        Ok(Patch { frustum, data })
    }
}

/// Viewing directions on a regular angular lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionGrid<T> {
    pub interval: T,
    pub directions: Vec<Direction<T>>,
}

impl<T: Real> DirectionGrid<T> {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Rings of `2π / interval` azimuths at every elevation `k · interval`
/// strictly between the poles, plus one direction at each pole.
///
/// Order: north pole, rings from the highest elevation down (azimuths
/// `0, interval, …` wrapped into `[−π, π)`), south pole.
pub fn generate_view_directions<T: Real>(interval: T) -> Result<DirectionGrid<T>> {
    let two_pi = T::PI() + T::PI();
    if !(interval > T::zero() && interval <= two_pi) {
        return Err(Error::invalid(format!("direction interval {interval} rad out of range")));
    }
    let ratio = two_pi / interval;
    let n = ratio.round();
    if (ratio - n).abs() > T::lit(1e-9) * ratio.max(T::one()) {
        return Err(Error::invalid(format!(
            "direction interval {:.6}° does not divide 360°",
            interval.to_degrees()
        )));
    }
    let n_az = n.to_usize().unwrap_or(1);
    let tol = T::lit(1e-9);
    let max_k = ((T::FRAC_PI_2() - tol) / interval).floor().to_i64().unwrap_or(0);

    let mut directions = vec![Direction::new(T::zero(), T::FRAC_PI_2())];
    for k in (-max_k..=max_k).rev() {
        let el = T::lit(k as f64) * interval;
        for j in 0..n_az {
            directions.push(Direction::new(T::from_usize_lossy(j) * interval, el));
        }
    }
    directions.push(Direction::new(T::zero(), -T::FRAC_PI_2()));
    Ok(DirectionGrid {
        interval,
        directions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Sampler {
    Nearest,
    #[default]
    Bilinear,
}

/// Sample an ERP raster at continuous coordinates. Columns wrap across the
/// azimuth seam; rows clamp at the poles.
pub fn sample_erp<T: Real>(erp: &Grid<T>, x: T, y: T, ch: usize, sampler: Sampler) -> T {
    let rows = erp.rows() as i64;
    let cols = erp.cols() as i64;
    let wrap = |c: i64| c.rem_euclid(cols) as usize;
    let clamp = |r: i64| r.clamp(0, rows - 1) as usize;
    match sampler {
        Sampler::Nearest => {
            let c = x.round().to_i64().unwrap_or(0);
            let r = y.round().to_i64().unwrap_or(0);
            erp.get(clamp(r), wrap(c), ch)
        }
        Sampler::Bilinear => {
            let x0 = x.floor();
            let y0 = y.floor();
            let fx = x - x0;
            let fy = y - y0;
            let c0 = x0.to_i64().unwrap_or(0);
            let r0 = y0.to_i64().unwrap_or(0);
            let (ca, cb) = (wrap(c0), wrap(c0 + 1));
            let (ra, rb) = (clamp(r0), clamp(r0 + 1));
            let top = erp.get(ra, ca, ch) * (T::one() - fx) + erp.get(ra, cb, ch) * fx;
            let bot = erp.get(rb, ca, ch) * (T::one() - fx) + erp.get(rb, cb, ch) * fx;
            top * (T::one() - fy) + bot * fy
        }
    }
}

fn ensure_erp<T: Real>(erp: &Grid<T>) -> Result<()> {
    if erp.rows() < 2 || erp.cols() < 2 {
        return Err(Error::invalid(format!(
            "ERP grid {}x{} must be at least 2x2",
            erp.rows(),
            erp.cols()
        )));
    }
    Ok(())
}

/// Resample an ERP raster onto the tangent patch of `frustum`.
pub fn extract_patch<T: Real>(
    erp: &Grid<T>,
    frustum: &ViewFrustum<T>,
    sampler: Sampler,
) -> Result<Patch<T>> {
    ensure_erp(erp)?;
    let (w, h, chans) = (frustum.width(), frustum.height(), erp.channels());
    let mut out = Grid::zeros(h, w, chans);
    for r in 0..h {
        for c in 0..w {
            let d = frustum.patch_to_sphere(T::from_usize_lossy(c), T::from_usize_lossy(r));
            let (x, y) = sphere_to_erp(erp.rows(), erp.cols(), d);
            for ch in 0..chans {
                out.set(r, c, ch, sample_erp(erp, x, y, ch, sampler));
            }
        }
    }
    Patch::new(*frustum, out)
}

/// Extract many patches concurrently over a shared ERP raster.
pub fn extract_patches<T: Real>(
    erp: &Grid<T>,
    frusta: &[ViewFrustum<T>],
    sampler: Sampler,
) -> Result<Vec<Patch<T>>> {
    frusta
        .par_iter()
        .map(|f| extract_patch(erp, f, sampler))
        .collect()
}

/// For every ERP pixel, the nearest patch pixel of each frustum whose
/// rectangle contains the pixel direction. Stored in compressed-row form.
#[derive(Clone, Debug)]
pub struct ReprojectionPlan {
    rows: usize,
    cols: usize,
    patch_sizes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    /// `(patch index, row-major pixel index within that patch)`
    entries: Vec<(u32, u32)>,
}

impl ReprojectionPlan {
    pub fn new<T: Real>(frusta: &[ViewFrustum<T>], rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::invalid(format!("ERP size {rows}x{cols} must be at least 2x2")));
        }
        if frusta.is_empty() {
            return Err(Error::invalid("reprojection needs at least one patch"));
        }
        let per_row: Vec<Vec<Vec<(u32, u32)>>> = (0..rows)
            .into_par_iter()
            .map(|r| {
                (0..cols)
                    .map(|c| {
                        let d = erp_to_sphere(
                            rows,
                            cols,
                            T::from_usize_lossy(c),
                            T::from_usize_lossy(r),
                        );
                        let v = d.to_vec3();
                        let mut hits = Vec::new();
                        for (k, f) in frusta.iter().enumerate() {
                            if let Some((x, y)) = f.project(v).filter(|&(x, y)| f.contains(x, y)) {
                                let px = nearest_index(x, f.width());
                                let py = nearest_index(y, f.height());
                                hits.push((k as u32, (py * f.width() + px) as u32));
                            }
                        }
                        hits
                    })
                    .collect()
            })
            .collect();

        let mut offsets = Vec::with_capacity(rows * cols + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for row in per_row {
            for hits in row {
                entries.extend(hits);
                offsets.push(entries.len());
            }
        }
        Ok(ReprojectionPlan {
            rows,
            cols,
            patch_sizes: frusta.iter().map(|f| (f.height(), f.width())).collect(),
            offsets,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn patch_count(&self) -> usize {
        self.patch_sizes.len()
    }

    /// Patch samples gathered by ERP pixel `i` (row-major).
    #[inline]
    pub fn hits(&self, i: usize) -> &[(u32, u32)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Number of ERP pixels no patch covers.
    pub fn uncovered(&self) -> usize {
        self.offsets.windows(2).filter(|w| w[0] == w[1]).count()
    }

    fn check<T: Real>(&self, patches: &[&Grid<T>]) -> Result<usize> {
        if patches.len() != self.patch_sizes.len() {
            return Err(Error::shape(
                format!("{} patches", self.patch_sizes.len()),
                patches.len(),
            ));
        }
        let chans = patches[0].channels();
        for (g, &(h, w)) in patches.iter().zip(&self.patch_sizes) {
            if g.rows() != h || g.cols() != w || g.channels() != chans {
                return Err(Error::shape(format!("{h}x{w}x{chans}"), g.shape_str()));
            }
        }
        Ok(chans)
    }

    /// Average of the gathered samples per ERP pixel; uncovered pixels are 0.
    pub fn apply<T: Real>(&self, patches: &[&Grid<T>]) -> Result<Grid<T>> {
        let chans = self.check(patches)?;
        let mut out = Grid::zeros(self.rows, self.cols, chans);
        out.data_mut()
            .par_chunks_mut(self.cols * chans)
            .enumerate()
            .for_each(|(r, row)| {
                for c in 0..self.cols {
                    let hits = self.hits(r * self.cols + c);
                    if hits.is_empty() {
                        continue;
                    }
                    let inv = T::one() / T::from_usize_lossy(hits.len());
                    for ch in 0..chans {
                        let mut acc = T::zero();
                        for &(k, p) in hits {
                            acc += patches[k as usize].data()[p as usize * chans + ch];
                        }
                        row[c * chans + ch] = acc * inv;
                    }
                }
            });
        Ok(out)
    }

    /// Adjoint of [`apply`](Self::apply): scatter an ERP gradient back onto the
    /// patch pixels that produced each average.
    pub fn apply_adjoint<T: Real>(&self, grad: &Grid<T>) -> Result<Vec<Grid<T>>> {
        if grad.rows() != self.rows || grad.cols() != self.cols {
            return Err(Error::shape(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", grad.rows(), grad.cols()),
            ));
        }
        let chans = grad.channels();
        let mut out: Vec<Grid<T>> = self
            .patch_sizes
            .iter()
            .map(|&(h, w)| Grid::zeros(h, w, chans))
            .collect();
        for i in 0..self.rows * self.cols {
            let hits = self.hits(i);
            if hits.is_empty() {
                continue;
            }
            let inv = T::one() / T::from_usize_lossy(hits.len());
            for &(k, p) in hits {
                let dst = out[k as usize].data_mut();
                for ch in 0..chans {
                    dst[p as usize * chans + ch] += grad.data()[i * chans + ch] * inv;
                }
            }
        }
        Ok(out)
    }
}

#[inline]
fn nearest_index<T: Real>(x: T, n: usize) -> usize {
    x.round().to_i64().unwrap_or(0).clamp(0, n as i64 - 1) as usize
}

/// Result of [`reproject_average`].
#[derive(Clone, Debug)]
pub struct Reprojection<T> {
    pub map: Grid<T>,
    pub uncovered: usize,
}

/// Fuse patch rasters into an ERP raster: each ERP pixel takes the mean of the
/// nearest samples from every patch containing its direction.
pub fn reproject_average<T: Real>(
    patches: &[Patch<T>],
    rows: usize,
    cols: usize,
) -> Result<Reprojection<T>> {
    let frusta: Vec<_> = patches.iter().map(|p| p.frustum).collect();
    let plan = ReprojectionPlan::new(&frusta, rows, cols)?;
    let grids: Vec<&Grid<T>> = patches.iter().map(|p| &p.data).collect();
    let map = plan.apply(&grids)?;
    let uncovered = plan.uncovered();
    if uncovered > 0 {
        log::warn!("{uncovered} of {} ERP pixels not covered by any patch", rows * cols);
    }
    Ok(Reprojection { map, uncovered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    #[test]
    fn direction_counts() {
        let g = generate_view_directions(deg(45.0)).unwrap();
        assert_eq!(g.len(), 26);
        let equator = g.directions.iter().filter(|d| d.elevation().abs() < 1e-12).count();
        assert_eq!(equator, 8);
        let poles = g
            .directions
            .iter()
            .filter(|d| (d.elevation().abs() - PI / 2.0).abs() < 1e-12)
            .count();
        assert_eq!(poles, 2);
        assert_eq!(generate_view_directions(deg(90.0)).unwrap().len(), 6);
        assert_eq!(generate_view_directions(deg(180.0)).unwrap().len(), 4);
        assert_eq!(generate_view_directions(deg(60.0)).unwrap().len(), 6 * 3 + 2);
    }

    #[test]
    fn non_divisor_interval_rejected() {
        assert!(generate_view_directions(deg(50.0)).is_err());
        assert!(generate_view_directions(deg(0.0)).is_err());
    }

    #[test]
    fn constant_erp_gives_constant_patch() {
        let erp = Grid::<f64>::filled(20, 40, 1, 0.7);
        let f = ViewFrustum::square(Direction::new(0.3, 1.0), deg(100.0), 16).unwrap();
        for s in [Sampler::Nearest, Sampler::Bilinear] {
            let p = extract_patch(&erp, &f, s).unwrap();
            assert!(p.data.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn azimuth_field_matches_pixel_direction() {
        let (rows, cols) = (90, 180);
        let erp = Grid::from_fn(rows, cols, |r, c| {
            erp_to_sphere::<f64>(rows, cols, c as f64, r as f64).azimuth()
        });
        let f = ViewFrustum::square(Direction::new(0.5, 0.2), deg(90.0), 32).unwrap();
        let p = extract_patch(&erp, &f, Sampler::Bilinear).unwrap();
        let tol = 2.0 * 2.0 * PI / cols as f64;
        for r in 0..32 {
            for c in 0..32 {
                let d = f.patch_to_sphere(c as f64, r as f64);
                assert!((p.data.get(r, c, 0) - d.azimuth()).abs() <= tol);
            }
        }
    }

    #[test]
    fn seam_is_continuous() {
        // sin θ is continuous across θ = ±π.
        let (rows, cols) = (64, 128);
        let erp = Grid::from_fn(rows, cols, |r, c| {
            erp_to_sphere::<f64>(rows, cols, c as f64, r as f64).azimuth().sin()
        });
        let f = ViewFrustum::square(Direction::new(PI, 0.0), deg(60.0), 24).unwrap();
        let p = extract_patch(&erp, &f, Sampler::Bilinear).unwrap();
        for r in 0..24 {
            for c in 0..24 {
                let truth = f.patch_to_sphere(c as f64, r as f64).azimuth().sin();
                assert!((p.data.get(r, c, 0) - truth).abs() < 0.01);
            }
        }
    }

    #[test]
    fn single_patch_reprojects_its_nearest_value() {
        let f = ViewFrustum::square(Direction::new(0.0, 0.0), deg(90.0), 8).unwrap();
        let data = Grid::from_fn(8, 8, |r, c| (r * 8 + c) as f64);
        let patch = Patch::new(f, data.clone()).unwrap();
        let (rows, cols) = (32, 64);
        let rep = reproject_average(&[patch], rows, cols).unwrap();
        assert!(rep.uncovered > 0);
        for r in 0..rows {
            for c in 0..cols {
                let d = erp_to_sphere::<f64>(rows, cols, c as f64, r as f64);
                match f.sphere_to_patch(d) {
                    Some((x, y)) => {
                        let px = x.round().clamp(0.0, 7.0) as usize;
                        let py = y.round().clamp(0.0, 7.0) as usize;
                        assert_eq!(rep.map.get(r, c, 0), data.get(py, px, 0));
                    }
                    None => assert_eq!(rep.map.get(r, c, 0), 0.0),
                }
            }
        }
    }

    #[test]
    fn overlapping_patches_average() {
        let d = Direction::new(0.0, 0.0);
        let f = ViewFrustum::square(d, deg(90.0), 8).unwrap();
        let a = Patch::new(f, Grid::filled(8, 8, 1, 0.2)).unwrap();
        let b = Patch::new(f, Grid::filled(8, 8, 1, 0.4)).unwrap();
        let rep = reproject_average(&[a, b], 16, 32).unwrap();
        let (x, y) = sphere_to_erp(16, 32, d);
        let v = rep.map.get(y.round() as usize, x.round() as usize, 0);
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn adjoint_identity() {
        // <A p, g> == <p, A^T g>
        let dirs = generate_view_directions(deg(90.0)).unwrap();
        let frusta: Vec<_> = dirs
            .directions
            .iter()
            .map(|&d| ViewFrustum::square(d, deg(100.0), 6).unwrap())
            .collect();
        let plan = ReprojectionPlan::new(&frusta, 12, 24).unwrap();
        let patches: Vec<Grid<f64>> = (0..frusta.len())
            .map(|k| Grid::from_fn(6, 6, |r, c| ((k * 31 + r * 7 + c * 3) % 11) as f64 * 0.1))
            .collect();
        let refs: Vec<&Grid<f64>> = patches.iter().collect();
        let g = Grid::from_fn(12, 24, |r, c| ((r * 5 + c * 13) % 7) as f64 - 3.0);
        let ap = plan.apply(&refs).unwrap();
        let lhs: f64 = ap.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let at = plan.apply_adjoint(&g).unwrap();
        let rhs: f64 = patches
            .iter()
            .zip(&at)
            .map(|(p, q)| p.data().iter().zip(q.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn full_coverage_small_scale() {
        let dirs = generate_view_directions(deg(45.0)).unwrap();
        let frusta: Vec<_> = dirs
            .directions
            .iter()
            .map(|&d| ViewFrustum::square(d, deg(100.0), 16).unwrap())
            .collect();
        let plan = ReprojectionPlan::new(&frusta, 50, 100).unwrap();
        assert_eq!(plan.uncovered(), 0);
    }
}
