//! Coordinate conversions between equirectangular pixels, sphere directions,
//! 3D unit vectors and tangent-plane patch pixels.
//!
//! World frame: a direction with azimuth `θ` and elevation `φ` is the unit
//! vector `(−cos θ cos φ, sin θ cos φ, −sin φ)`, which is exactly the view
//! axis `Z = X × Y` of the tangent basis below. The `z` axis therefore points
//! towards the south pole and `Y` (image rows) points down in every patch.
//!
//! Raster conventions: integer pixel `i` has its center at continuous
//! coordinate `i`, rows grow downward, and column `c` of an ERP grid with
//! `cols` columns sits at azimuth `((c + 0.5) / cols − 0.5) · 2π`.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Real;

/// Viewing direction on the sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction<T> {
    azimuth: T,
    elevation: T,
}

impl<T: Real> Direction<T> {
    /// Build a direction, wrapping the azimuth into `[−π, π)` and clamping the
    /// elevation to `[−π/2, π/2]`.
    pub fn new(azimuth: T, elevation: T) -> Self {
        Direction {
            azimuth: wrap_azimuth(azimuth),
            elevation: elevation.max(-T::FRAC_PI_2()).min(T::FRAC_PI_2()),
        }
    }

    pub fn from_degrees(azimuth: T, elevation: T) -> Self {
        Self::new(azimuth.to_radians(), elevation.to_radians())
    }

    #[inline]
    pub fn azimuth(&self) -> T {
        self.azimuth
    }

    #[inline]
    pub fn elevation(&self) -> T {
        self.elevation
    }

    pub fn to_vec3(&self) -> Vec3<T> {
        let (st, ct) = self.azimuth.sin_cos();
        let (sp, cp) = self.elevation.sin_cos();
        Vec3::new(-ct * cp, st * cp, -sp)
    }

    /// Direction of a non-zero vector.
    pub fn from_vec3(v: Vec3<T>) -> Self {
        let n = v.norm();
        let z = (-v.z / n).max(-T::one()).min(T::one());
        Direction::new(v.y.atan2(-v.x), z.asin())
    }

    /// Great-circle distance in radians.
    pub fn angle_to(&self, other: &Direction<T>) -> T {
        let a = self.to_vec3();
        let b = other.to_vec3();
        a.cross(b).norm().atan2(a.dot(b))
    }
}

/// Wrap an angle into `[−π, π)`.
pub fn wrap_azimuth<T: Real>(a: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = a - two_pi * ((a + T::PI()) / two_pi).floor();
    if r >= T::PI() {
        r -= two_pi;
    }
    if r < -T::PI() {
        r += two_pi;
    }
    r
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3<T>) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3<T> {
        self * (T::one() / self.norm())
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Vec3<T>;
    fn add(self, o: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Vec3<T>;
    fn sub(self, o: Vec3<T>) -> Vec3<T> {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Vec3<T>;
    fn mul(self, s: T) -> Vec3<T> {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Orthonormal image basis of a tangent patch: `x` to the right (columns),
/// `y` down (rows), `z` along the view axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentBasis<T> {
    pub x: Vec3<T>,
    pub y: Vec3<T>,
    pub z: Vec3<T>,
}

/// Image unit vectors at a viewing direction:
/// `X = (−sin θ, −cos θ, 0)`, `Y = (−sin φ cos θ, sin φ sin θ, cos φ)`, `Z = X × Y`.
pub fn tangent_basis<T: Real>(d: Direction<T>) -> TangentBasis<T> {
    let (st, ct) = d.azimuth.sin_cos();
    let (sp, cp) = d.elevation.sin_cos();
    let x = Vec3::new(-st, -ct, T::zero());
    let y = Vec3::new(-sp * ct, sp * st, cp);
    TangentBasis { x, y, z: x.cross(y) }
}

/// Distance from the camera to the image plane, in pixels, for an angle of
/// view spanning `size` pixels: `size / (2 tan(aov / 2))`.
pub fn focal_length<T: Real>(aov: T, size: usize) -> Result<T> {
    if !(aov > T::zero() && aov < T::PI()) {
        return Err(Error::invalid(format!(
            "angle of view {aov} rad outside (0, π)"
        )));
    }
    let two = T::lit(2.0);
    Ok(T::from_usize_lossy(size) / (two * (aov / two).tan()))
}

/// Viewing direction plus angles of view and patch pixel size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewFrustum<T> {
    direction: Direction<T>,
    aov_h: T,
    aov_v: T,
    width: usize,
    height: usize,
    basis: TangentBasis<T>,
    fx: T,
    fy: T,
}

impl<T: Real> ViewFrustum<T> {
    pub fn new(
        direction: Direction<T>,
        aov_h: T,
        aov_v: T,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::invalid(format!(
                "patch size {width}x{height} must be at least 2x2"
            )));
        }
        let fx = focal_length(aov_h, width)?;
        let fy = focal_length(aov_v, height)?;
        Ok(ViewFrustum {
            direction,
            aov_h,
            aov_v,
            width,
            height,
            basis: tangent_basis(direction),
            fx,
            fy,
        })
    }

    /// Square patch with the same angle of view on both axes.
    pub fn square(direction: Direction<T>, aov: T, size: usize) -> Result<Self> {
        Self::new(direction, aov, aov, size, size)
    }

    #[inline]
    pub fn direction(&self) -> Direction<T> {
        self.direction
    }

    #[inline]
    pub fn aov(&self) -> (T, T) {
        (self.aov_h, self.aov_v)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn basis(&self) -> &TangentBasis<T> {
        &self.basis
    }

    /// Focal lengths `(fx, fy)` in pixels.
    #[inline]
    pub fn focal(&self) -> (T, T) {
        (self.fx, self.fy)
    }

    /// Continuous coordinates of the patch center.
    #[inline]
    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (
            T::from_usize_lossy(self.width - 1) * half,
            T::from_usize_lossy(self.height - 1) * half,
        )
    }

    /// Unnormalized ray through continuous patch coordinates.
    #[inline]
    pub fn ray(&self, x: T, y: T) -> Vec3<T> {
        let (cx, cy) = self.center();
        self.basis.z + self.basis.x * ((x - cx) / self.fx) + self.basis.y * ((y - cy) / self.fy)
    }

    /// Direction seen through continuous patch coordinates `(x, y)`.
    pub fn patch_to_sphere(&self, x: T, y: T) -> Direction<T> {
        Direction::from_vec3(self.ray(x, y))
    }

    /// Project a unit vector into unbounded patch coordinates; `None` behind
    /// the camera.
    #[inline]
    pub fn project(&self, v: Vec3<T>) -> Option<(T, T)> {
        let depth = v.dot(self.basis.z);
        if depth <= T::zero() {
            return None;
        }
        let (cx, cy) = self.center();
        Some((
            cx + self.fx * v.dot(self.basis.x) / depth,
            cy + self.fy * v.dot(self.basis.y) / depth,
        ))
    }

    /// Whether continuous coordinates fall on the patch rectangle
    /// `[−0.5, W − 0.5] × [−0.5, H − 0.5]`.
    #[inline]
    pub fn contains(&self, x: T, y: T) -> bool {
        let half = T::lit(0.5);
        x >= -half
            && y >= -half
            && x <= T::from_usize_lossy(self.width) - half
            && y <= T::from_usize_lossy(self.height) - half
    }

    /// Patch coordinates of a direction, if it is in front of the camera and
    /// inside the patch rectangle.
    pub fn sphere_to_patch(&self, d: Direction<T>) -> Option<(T, T)> {
        self.project(d.to_vec3())
            .filter(|&(x, y)| self.contains(x, y))
    }
}

/// Direction at continuous ERP coordinates (`x` = column, `y` = row).
pub fn erp_to_sphere<T: Real>(rows: usize, cols: usize, x: T, y: T) -> Direction<T> {
    let half = T::lit(0.5);
    let theta = ((x + half) / T::from_usize_lossy(cols) - half) * (T::PI() + T::PI());
    let phi = (half - (y + half) / T::from_usize_lossy(rows)) * T::PI();
    Direction::new(theta, phi)
}

/// Continuous ERP coordinates `(x, y)` of a direction; `x ∈ [−0.5, cols − 0.5)`.
pub fn sphere_to_erp<T: Real>(rows: usize, cols: usize, d: Direction<T>) -> (T, T) {
    let half = T::lit(0.5);
    let x = (d.azimuth / (T::PI() + T::PI()) + half) * T::from_usize_lossy(cols) - half;
    let y = (half - d.elevation / T::PI()) * T::from_usize_lossy(rows) - half;
    (x, y)
}

/// Elevation of the center of ERP row `r`.
#[inline]
pub fn row_elevation<T: Real>(rows: usize, r: usize) -> T {
    let half = T::lit(0.5);
    (half - (T::from_usize_lossy(r) + half) / T::from_usize_lossy(rows)) * T::PI()
}

/// Per-pixel solid-angle weights (∝ cos of the pixel-center elevation),
/// normalized to sum to one.
pub fn solid_angle_weights<T: Real>(rows: usize, cols: usize) -> Result<Grid<T>> {
    if rows < 2 || cols < 2 {
        return Err(Error::invalid(format!(
            "ERP size {rows}x{cols} must be at least 2x2"
        )));
    }
    let row_w: Vec<T> = (0..rows).map(|r| row_elevation::<T>(rows, r).cos()).collect();
    let total = row_w.iter().copied().sum::<T>() * T::from_usize_lossy(cols);
    Ok(Grid::from_fn(rows, cols, |r, _| row_w[r] / total))
}
