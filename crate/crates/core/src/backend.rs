//! Pluggable 2D saliency predictors.
//!
//! Backends map an image patch to a raw, non-negative, unnormalized saliency
//! patch and optionally a feature map for the feature-driven integration
//! layers.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::pfm;
use crate::patching::Patch;
use crate::scalar::Real;

/// Identifies one extracted patch: its index in the direction grid and its
/// angle of view in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchKey {
    pub direction: usize,
    pub aov_deg: f64,
}

impl PatchKey {
    pub fn new(direction: usize, aov_deg: f64) -> Self {
        PatchKey { direction, aov_deg }
    }

    /// `d{idx}_a{aov}` with integral angles printed without decimals.
    pub fn stem(&self) -> String {
        format!("d{}_a{}", self.direction, format_degrees(self.aov_deg))
    }

    pub fn file_name(&self) -> String {
        format!("{}.pfm", self.stem())
    }
}

pub(crate) fn format_degrees(deg: f64) -> String {
    if (deg - deg.round()).abs() < 1e-9 {
        format!("{}", deg.round() as i64)
    } else {
        let s = format!("{deg:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl std::fmt::Display for PatchKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.stem())
    }
}

/// Raw backend output for one patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    /// `height × width × 1`, non-negative, not normalized.
    pub saliency: Grid<T>,
    /// Backend-defined feature channels, if any.
    pub features: Option<Grid<T>>,
}

pub trait SaliencyBackend<T: Real>: Send + Sync {
    fn predict(&self, key: &PatchKey, patch: &Patch<T>) -> Result<Prediction<T>>;

    /// Number of feature channels produced, if any.
    fn feature_channels(&self) -> Option<usize> {
        None
    }
}

/// Normalized 1D Gaussian with radius `ceil(3σ)`.
pub fn gaussian_kernel<T: Real>(sigma: T) -> Vec<T> {
    let radius = (sigma * T::lit(3.0)).ceil().to_usize().unwrap_or(0).max(1);
    let two_s2 = T::lit(2.0) * sigma * sigma;
    let mut k: Vec<T> = (0..=2 * radius)
        .map(|i| {
            let d = T::from_usize_lossy(i) - T::from_usize_lossy(radius);
            (-(d * d) / two_s2).exp()
        })
        .collect();
    let s: T = k.iter().copied().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur of a single-channel grid with border replication.
pub fn gaussian_blur<T: Real>(img: &Grid<T>, sigma: T) -> Grid<T> {
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as i64;
    let (rows, cols) = (img.rows() as i64, img.cols() as i64);
    let mut tmp = Grid::zeros(img.rows(), img.cols(), 1);
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = T::zero();
            for (i, &w) in k.iter().enumerate() {
                let cc = (c + i as i64 - radius).clamp(0, cols - 1);
                acc += w * img.get(r as usize, cc as usize, 0);
            }
            tmp.set(r as usize, c as usize, 0, acc);
        }
    }
    let mut out = Grid::zeros(img.rows(), img.cols(), 1);
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = T::zero();
            for (i, &w) in k.iter().enumerate() {
                let rr = (r + i as i64 - radius).clamp(0, rows - 1);
                acc += w * tmp.get(rr as usize, c as usize, 0);
            }
            out.set(r as usize, c as usize, 0, acc);
        }
    }
    out
}

/// Center-surround contrast: `|G(σ_c) − G(σ_s)|` per channel, summed over
/// channels and scale pairs. Features are the per-pair contrast maps followed by
/// the per-pair surround intensity (`2 × pairs` channels).
#[derive(Clone, Debug)]
pub struct ContrastBackend {
    pub sigma_pairs: Vec<(f64, f64)>,
}

impl Default for ContrastBackend {
    fn default() -> Self {
        ContrastBackend {
            sigma_pairs: vec![(1.0, 4.0), (2.0, 8.0), (4.0, 16.0)],
        }
    }
}

impl ContrastBackend {
    /// One response map per scale pair, each summed over image channels.
    pub fn pair_responses<T: Real>(&self, img: &Grid<T>) -> Result<Vec<Grid<T>>> {
        Ok(self.responses(img)?.0)
    }

    /// Per-pair contrast maps and per-pair surround intensity (channel mean
    /// blurred at the surround scale).
    fn responses<T: Real>(&self, img: &Grid<T>) -> Result<(Vec<Grid<T>>, Vec<Grid<T>>)> {
        if img.is_empty() {
            return Err(Error::invalid("empty patch"));
        }
        if img.channels() != 1 && img.channels() != 3 {
            return Err(Error::invalid(format!(
                "contrast backend expects 1 or 3 channels, got {}",
                img.channels()
            )));
        }
        // DoG ignores constant offsets; subtracting the channel minimum makes a
        // flat channel exactly zero.
        let planes: Vec<Grid<T>> = (0..img.channels())
            .map(|ch| {
                let p = img.channel(ch);
                let lo = p.min_value();
                p.map(|v| v - lo)
            })
            .collect();
        let inv_ch = T::one() / T::from_usize_lossy(planes.len());
        let mut contrast = Vec::with_capacity(self.sigma_pairs.len());
        let mut intensity = Vec::with_capacity(self.sigma_pairs.len());
        for &(sc, ss) in &self.sigma_pairs {
            let mut acc = Grid::zeros(img.rows(), img.cols(), 1);
            let mut mean = Grid::zeros(img.rows(), img.cols(), 1);
            for p in &planes {
                let center = gaussian_blur(p, T::lit(sc));
                let surround = gaussian_blur(p, T::lit(ss));
                for (((a, m), &c), &s) in acc
                    .data_mut()
                    .iter_mut()
                    .zip(mean.data_mut())
                    .zip(center.data())
                    .zip(surround.data())
                {
                    *a += (c - s).abs();
                    *m += s * inv_ch;
                }
            }
            contrast.push(acc);
            intensity.push(mean);
        }
        Ok((contrast, intensity))
    }
}

impl<T: Real> SaliencyBackend<T> for ContrastBackend {
    fn predict(&self, _key: &PatchKey, patch: &Patch<T>) -> Result<Prediction<T>> {
        let (pairs, intensity) = self.responses(&patch.data)?;
        let mut saliency = Grid::zeros(patch.data.rows(), patch.data.cols(), 1);
        for p in &pairs {
            for (s, &v) in saliency.data_mut().iter_mut().zip(p.data()) {
                *s += v;
            }
        }
        Ok(Prediction {
            saliency,
            features: Some(Grid::stack(&[pairs, intensity].concat())?),
        })
    }

    fn feature_channels(&self) -> Option<usize> {
        Some(2 * self.sigma_pairs.len())
    }
}

/// Loads precomputed saliency maps named `d{idx}_a{aov}.pfm` from a directory.
#[derive(Clone, Debug)]
pub struct FileBackend {
    pub dir: PathBuf,
}

impl FileBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileBackend { dir: dir.into() }
    }
}

impl<T: Real> SaliencyBackend<T> for FileBackend {
    fn predict(&self, key: &PatchKey, patch: &Patch<T>) -> Result<Prediction<T>> {
        let path = self.dir.join(key.file_name());
        let map: Grid<T> = pfm::read(&path)?.cast();
        if map.channels() != 1
            || map.rows() != patch.data.rows()
            || map.cols() != patch.data.cols()
        {
            return Err(Error::shape(
                format!("{}x{}x1", patch.data.rows(), patch.data.cols()),
                map.shape_str(),
            ));
        }
        map.ensure_saliency(&path.display().to_string())?;
        Ok(Prediction {
            saliency: map,
            features: None,
        })
    }
}

/// Predicts the same value everywhere. Useful for plumbing checks.
#[derive(Clone, Copy, Debug)]
pub struct UniformBackend {
    pub value: f64,
}

impl<T: Real> SaliencyBackend<T> for UniformBackend {
    fn predict(&self, _key: &PatchKey, patch: &Patch<T>) -> Result<Prediction<T>> {
        Ok(Prediction {
            saliency: Grid::filled(patch.data.rows(), patch.data.cols(), 1, T::lit(self.value)),
            features: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Direction, ViewFrustum};

    fn patch_of(g: Grid<f64>) -> Patch<f64> {
        let f = ViewFrustum::new(Direction::new(0.0, 0.0), 1.5, 1.5, g.cols(), g.rows()).unwrap();
        Patch::new(f, g).unwrap()
    }

    /// Direct (non-separable) 2D Gaussian with border replication.
    fn direct_blur(img: &Grid<f64>, sigma: f64) -> Grid<f64> {
        let radius = (3.0 * sigma).ceil() as i64;
        let mut norm = 0.0;
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                norm += (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            }
        }
        let (rows, cols) = (img.rows() as i64, img.cols() as i64);
        Grid::from_fn(img.rows(), img.cols(), |r, c| {
            let mut acc = 0.0;
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let w = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / norm;
                    let rr = (r as i64 + dy).clamp(0, rows - 1) as usize;
                    let cc = (c as i64 + dx).clamp(0, cols - 1) as usize;
                    acc += w * img.get(rr, cc, 0);
                }
            }
            acc
        })
    }

    fn disk(size: usize, cx: f64, cy: f64, radius: f64) -> impl Fn(usize, usize) -> f64 {
        let _ = size;
        move |r, c| {
            let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
            if d <= radius {
                1.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn constant_patch_has_no_contrast() {
        let p = patch_of(Grid::filled(24, 24, 3, 0.37));
        let pred = <ContrastBackend as SaliencyBackend<f64>>::predict(
            &ContrastBackend::default(),
            &PatchKey::new(0, 100.0),
            &p,
        )
        .unwrap();
        assert!(pred.saliency.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bright_pixel_peaks_in_place() {
        let mut g = Grid::zeros(33, 33, 1);
        g.set(16, 16, 0, 1.0);
        let p = patch_of(g);
        let pred = ContrastBackend::default()
            .predict(&PatchKey::new(0, 100.0), &p)
            .unwrap();
        assert_eq!(pred.saliency.argmax(), (16, 16));
        assert_eq!(pred.features.unwrap().channels(), 6);
    }

    #[test]
    fn separable_blur_matches_direct_convolution() {
        let g = Grid::from_fn(20, 17, |r, c| ((r * 7 + c * 3) % 5) as f64);
        for sigma in [1.0, 2.5] {
            let a = gaussian_blur(&g, sigma);
            let b = direct_blur(&g, sigma);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blobs_respond_at_their_scale() {
        // Small blob (radius 1.5) on the left, large blob (radius 8) on the right.
        let n = 64;
        let small = disk(n, 12.0, 32.0, 1.5);
        let large = disk(n, 44.0, 32.0, 8.0);
        let g = Grid::from_fn(n, n, |r, c| small(r, c).max(large(r, c)));
        let be = ContrastBackend::default();
        let got = be.pair_responses(&g).unwrap();
        // Oracle: direct filter responses per pair.
        let oracle: Vec<Grid<f64>> = be
            .sigma_pairs
            .iter()
            .map(|&(sc, ss)| {
                let c = direct_blur(&g, sc);
                let s = direct_blur(&g, ss);
                Grid::from_fn(n, n, |r, cc| (c.get(r, cc, 0) - s.get(r, cc, 0)).abs())
            })
            .collect();
        for (a, b) in got.iter().zip(&oracle) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let best_pair = |r: usize, c: usize| {
            (0..3)
                .max_by(|&i, &j| oracle[i].get(r, c, 0).total_cmp(&oracle[j].get(r, c, 0)))
                .unwrap()
        };
        assert_eq!(best_pair(32, 12), 0);
        assert_eq!(best_pair(32, 44), 2);
    }

    #[test]
    fn file_backend_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let key = PatchKey::new(3, 110.0);
        assert_eq!(key.file_name(), "d3_a110.pfm");
        let map = Grid::from_fn(6, 5, |r, c| (r + c) as f32 * 0.125);
        pfm::write(dir.path().join(key.file_name()), &map).unwrap();
        let be = FileBackend::new(dir.path());
        let p = patch_of(Grid::zeros(6, 5, 1));
        let got = be.predict(&key, &p).unwrap();
        assert_eq!(got.saliency, map.cast::<f64>());

        let wrong = patch_of(Grid::zeros(5, 5, 1));
        assert!(matches!(be.predict(&key, &wrong), Err(Error::DimensionMismatch { .. })));

        let missing = PatchKey::new(4, 110.0);
        assert!(matches!(be.predict(&missing, &p), Err(Error::Io { .. })));

        let mut neg = map.clone();
        neg.set(0, 0, 0, -1.0);
        pfm::write(dir.path().join(key.file_name()), &neg).unwrap();
        assert!(matches!(be.predict(&key, &p), Err(Error::InvalidSaliency(_))));
    }

    #[test]
    fn fractional_aov_names() {
        assert_eq!(PatchKey::new(0, 112.5).stem(), "d0_a112.5");
    }
}
