//! Synthetic ERP scenes with known saliency, for experiments and tests.

use rand::Rng;

use crate::backend::{PatchKey, Prediction, SaliencyBackend};
use crate::error::Result;
use crate::geometry::{erp_to_sphere, row_elevation, Direction};
use crate::grid::Grid;
use crate::patching::Patch;
use crate::scalar::Real;

/// Isotropic Gaussian bump on the sphere; `sigma` is angular (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub center: Direction<f64>,
    pub sigma: f64,
    pub amplitude: f64,
}

impl Blob {
    pub fn value(&self, d: Direction<f64>) -> f64 {
        let a = self.center.angle_to(&d);
        self.amplitude * (-a * a / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Direction drawn uniformly on the sphere.
pub fn uniform_direction(rng: &mut impl Rng) -> Direction<f64> {
    let z: f64 = rng.gen_range(-1.0..1.0);
    Direction::new(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI), z.asin())
}

/// `floor + Σ blobs` sampled at ERP pixel centers.
pub fn render(rows: usize, cols: usize, blobs: &[Blob], floor: f64) -> Grid<f64> {
    Grid::from_fn(rows, cols, |r, c| {
        let d = erp_to_sphere(rows, cols, c as f64, r as f64);
        floor + blobs.iter().map(|b| b.value(d)).sum::<f64>()
    })
}

/// `exp(−φ² / 2σ²)` per ERP row.
pub fn elevation_prior(rows: usize, cols: usize, sigma: f64) -> Grid<f64> {
    Grid::from_fn(rows, cols, |r, _| {
        let e: f64 = row_elevation(rows, r);
        (-e * e / (2.0 * sigma * sigma)).exp()
    })
}

/// An ERP image and its ground-truth saliency map.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Grid<f64>,
    pub saliency: Grid<f64>,
}

/// Random blob content whose saliency is the content times an elevation
/// prior of width `prior_sigma`.
pub fn equator_scene(rng: &mut impl Rng, rows: usize, cols: usize, prior_sigma: f64) -> Scene {
    let blobs: Vec<Blob> = (0..12)
        .map(|_| Blob {
            center: uniform_direction(rng),
            sigma: rng.gen_range(10f64..25.0).to_radians(),
            amplitude: rng.gen_range(0.5..1.5),
        })
        .collect();
    let image = render(rows, cols, &blobs, 0.1);
    let prior = elevation_prior(rows, cols, prior_sigma);
    let saliency = Grid::from_fn(rows, cols, |r, c| image.get(r, c, 0) * prior.get(r, c, 0));
    Scene { image, saliency }
}

/// Bright targets of two angular sizes on a dark background. Fixations fall
/// on the targets, so the saliency is the target intensity over a small floor.
pub fn two_scale_scene(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    n_targets: usize,
    small_sigma: f64,
    large_sigma: f64,
) -> Scene {
    let targets: Vec<Blob> = (0..n_targets)
        .map(|i| {
            // keep targets away from the poles, where the tangent grid is sparse
            let d = loop {
                let d = uniform_direction(rng);
                if d.elevation().abs() < 60f64.to_radians() {
                    break d;
                }
            };
            Blob {
                center: d,
                sigma: if i % 2 == 0 { small_sigma } else { large_sigma },
                amplitude: 1.0,
            }
        })
        .collect();
    let image = render(rows, cols, &targets, 0.0);
    let saliency = image.map(|v| v + 1e-3);
    Scene { image, saliency }
}

/// Backend that reports the patch intensity itself as saliency, standing in
/// for a perfect content detector.
#[derive(Clone, Copy, Debug, Default)]
pub struct ContentBackend;

impl<T: Real> SaliencyBackend<T> for ContentBackend {
    fn predict(&self, _key: &PatchKey, patch: &Patch<T>) -> Result<Prediction<T>> {
        let saliency = patch.data.channel(0).map(|v| v.max(T::zero()));
        Ok(Prediction {
            saliency,
            features: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prior_peaks_at_equator() {
        let p = elevation_prior(8, 16, 30f64.to_radians());
        assert!(p.get(3, 0, 0) > p.get(0, 0, 0));
        assert_eq!(p.get(3, 0, 0), p.get(4, 5, 0));
        let e = 78.75f64.to_radians();
        assert!((p.get(0, 0, 0) - (-e * e / (2.0 * 30f64.to_radians().powi(2))).exp()).abs() < 1e-12);
    }

    #[test]
    fn blob_peaks_at_center() {
        let b = Blob {
            center: Direction::new(0.0, 0.0),
            sigma: 0.2,
            amplitude: 2.0,
        };
        assert_eq!(b.value(Direction::new(0.0, 0.0)), 2.0);
        assert!((b.value(Direction::new(0.2, 0.0)) - 2.0 * (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn scenes_are_valid_saliency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = equator_scene(&mut rng, 16, 32, 0.5);
        s.saliency.ensure_saliency("gt").unwrap();
        let t = two_scale_scene(&mut rng, 16, 32, 4, 0.05, 0.2);
        t.saliency.ensure_saliency("gt").unwrap();
        assert!(t.image.max_value() > 0.5);
    }
}
