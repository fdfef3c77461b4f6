//! Sphere-uniform saliency metrics: NSS, AUC (Judd), CC and KLD.
//!
//! Every statistic over an ERP map weights pixels by their solid angle
//! (`cos` of the pixel-center elevation), which is equivalent to uniform
//! sampling on the sphere at pixel resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{solid_angle_weights, sphere_to_erp, Direction};
use crate::grid::Grid;
use crate::learning::KLD_EPS;
use crate::patching::{sample_erp, Sampler};
use crate::scalar::{pairwise_sum, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fixation<T> {
    pub direction: Direction<T>,
    pub weight: T,
}

/// Gaze points on the sphere.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FixationSet<T> {
    pub points: Vec<Fixation<T>>,
}

impl<T: Real> FixationSet<T> {
    pub fn new(points: Vec<Fixation<T>>) -> Self {
        FixationSet { points }
    }

    /// Unit-weight fixations from `(azimuth, elevation)` radians.
    pub fn from_angles(angles: &[(T, T)]) -> Self {
        FixationSet {
            points: angles
                .iter()
                .map(|&(a, e)| Fixation {
                    direction: Direction::new(a, e),
                    weight: T::one(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn total_weight(&self) -> T {
        self.points.iter().map(|f| f.weight).sum()
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::invalid("fixation set is empty"));
        }
        if !(self.total_weight() > T::zero()) {
            return Err(Error::invalid("fixation weights sum to zero"));
        }
        Ok(())
    }
}

/// Nearest ERP pixel `(row, col)` of a direction.
pub fn fixation_pixel<T: Real>(rows: usize, cols: usize, d: Direction<T>) -> (usize, usize) {
    let (x, y) = sphere_to_erp(rows, cols, d);
    let c = x.round().to_i64().unwrap_or(0).rem_euclid(cols as i64) as usize;
    let r = y.round().to_i64().unwrap_or(0).clamp(0, rows as i64 - 1) as usize;
    (r, c)
}

fn weighted_moments<T: Real>(map: &Grid<T>, w: &Grid<T>) -> (T, T) {
    let mean = pairwise_sum(&map.data().iter().zip(w.data()).map(|(&s, &wi)| wi * s).collect::<Vec<_>>());
    let var = pairwise_sum(
        &map.data()
            .iter()
            .zip(w.data())
            .map(|(&s, &wi)| wi * (s - mean) * (s - mean))
            .collect::<Vec<_>>(),
    );
    (mean, var)
}

fn is_flat<T: Real>(map: &Grid<T>, var: T) -> bool {
    let scale = map.max_value().abs().max(map.min_value().abs()).max(T::min_positive_value());
    !(var.sqrt() > T::epsilon() * T::lit(16.0) * scale)
}

fn check_map<T: Real>(map: &Grid<T>) -> Result<Grid<T>> {
    if map.channels() != 1 {
        return Err(Error::shape("single-channel map", map.shape_str()));
    }
    if !map.all_finite() {
        return Err(Error::invalid("map contains non-finite values"));
    }
    solid_angle_weights(map.rows(), map.cols())
}

/// Mean z-score (solid-angle-weighted mean and std) sampled bilinearly at the
/// fixations.
pub fn nss<T: Real>(map: &Grid<T>, fix: &FixationSet<T>) -> Result<T> {
    fix.ensure_nonempty()?;
    let w = check_map(map)?;
    let (mean, var) = weighted_moments(map, &w);
    if is_flat(map, var) {
        return Err(Error::degenerate("NSS is undefined for a constant map"));
    }
    let sd = var.sqrt();
    Ok(nss_points(map, &fix.points, mean, sd))
}

fn nss_points<T: Real>(map: &Grid<T>, pts: &[Fixation<T>], mean: T, sd: T) -> T {
    let mut acc = T::zero();
    let mut wsum = T::zero();
    for f in pts {
        let (x, y) = sphere_to_erp(map.rows(), map.cols(), f.direction);
        let v = sample_erp(map, x, y, 0, Sampler::Bilinear);
        acc += f.weight * (v - mean) / sd;
        wsum += f.weight;
    }
    acc / wsum
}

/// NSS per elevation band of width `band_width` radians, starting at −π/2.
/// Z-scoring stays global; bands without fixations are omitted.
pub fn nss_by_elevation<T: Real>(map: &Grid<T>, fix: &FixationSet<T>, band_width: T) -> Result<Vec<(T, T)>> {
    if !(band_width > T::zero()) {
        return Err(Error::invalid("band width must be positive"));
    }
    fix.ensure_nonempty()?;
    let w = check_map(map)?;
    let (mean, var) = weighted_moments(map, &w);
    if is_flat(map, var) {
        return Err(Error::degenerate("NSS is undefined for a constant map"));
    }
    let sd = var.sqrt();
    let n_bands = (T::PI() / band_width).ceil().to_usize().unwrap_or(1).max(1);
    let mut bands: Vec<Vec<Fixation<T>>> = vec![Vec::new(); n_bands];
    for f in &fix.points {
        let b = ((f.direction.elevation() + T::FRAC_PI_2()) / band_width)
            .floor()
            .to_usize()
            .unwrap_or(0)
            .min(n_bands - 1);
        bands[b].push(*f);
    }
    let half = T::lit(0.5);
    Ok(bands
        .iter()
        .enumerate()
        .filter(|(_, pts)| !pts.is_empty())
        .map(|(b, pts)| {
            let center = -T::FRAC_PI_2() + (T::from_usize_lossy(b) + half) * band_width;
            (center, nss_points(map, pts, mean, sd))
        })
        .collect())
}

/// AUC-Judd: one threshold per distinct fixated saliency value; TPR over
/// (weighted) fixations, FPR as the solid-angle fraction of non-fixated
/// pixels at or above the threshold; trapezoidal area. Fixations use their
/// nearest pixel. Equal values form a single threshold, so a constant map
/// scores exactly 0.5.
pub fn auc<T: Real>(map: &Grid<T>, fix: &FixationSet<T>) -> Result<T> {
    fix.ensure_nonempty()?;
    let w = check_map(map)?;
    let (rows, cols) = (map.rows(), map.cols());
    let mut fixated = vec![false; rows * cols];
    let mut fvals: Vec<(T, T)> = fix
        .points
        .iter()
        .map(|f| {
            let (r, c) = fixation_pixel(rows, cols, f.direction);
            fixated[r * cols + c] = true;
            (map.get(r, c, 0), f.weight)
        })
        .collect();

    let mut others: Vec<(T, T)> = map
        .data()
        .iter()
        .zip(w.data())
        .zip(&fixated)
        .filter(|(_, &fx)| !fx)
        .map(|((&v, &wi), _)| (v, wi))
        .collect();
    if others.is_empty() {
        return Err(Error::degenerate("every pixel is fixated; AUC undefined"));
    }
    others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    // suffix[i] = weight of others[i..]
    let mut suffix = vec![T::zero(); others.len() + 1];
    for i in (0..others.len()).rev() {
        suffix[i] = suffix[i + 1] + others[i].1;
    }
    let total_neg = suffix[0];
    let total_pos = fix.total_weight();

    fvals.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut tp_acc = T::zero();
    let mut prev = (T::zero(), T::zero());
    let mut area = T::zero();
    let half = T::lit(0.5);
    let mut i = 0;
    while i < fvals.len() {
        let t = fvals[i].0;
        while i < fvals.len() && fvals[i].0 == t {
            tp_acc += fvals[i].1;
            i += 1;
        }
        let first_ge = others.partition_point(|o| o.0 < t);
        let fp = suffix[first_ge] / total_neg;
        let tp = tp_acc / total_pos;
        area += (fp - prev.0) * (tp + prev.1) * half;
        prev = (fp, tp);
    }
    area += (T::one() - prev.0) * (T::one() + prev.1) * half;
    Ok(area)
}

/// Solid-angle-weighted Pearson correlation.
pub fn cc<T: Real>(a: &Grid<T>, b: &Grid<T>) -> Result<T> {
    a.ensure_same_shape(b)?;
    let w = check_map(a)?;
    check_map(b)?;
    let (ma, va) = weighted_moments(a, &w);
    let (mb, vb) = weighted_moments(b, &w);
    if is_flat(a, va) || is_flat(b, vb) {
        return Err(Error::degenerate("CC is undefined for a constant map"));
    }
    let cov = pairwise_sum(
        &a.data()
            .iter()
            .zip(b.data())
            .zip(w.data())
            .map(|((&x, &y), &wi)| wi * (x - ma) * (y - mb))
            .collect::<Vec<_>>(),
    );
    Ok(cov / (va * vb).sqrt())
}

/// Which distribution is the reference in the KLD.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KldDirection {
    /// `KLD(gt ‖ pred)`
    #[default]
    GroundTruthToPrediction,
    /// `KLD(pred ‖ gt)`
    PredictionToGroundTruth,
}

fn sphere_distribution<T: Real>(map: &Grid<T>, w: &Grid<T>, what: &str) -> Result<Vec<T>> {
    map.ensure_saliency(what)?;
    let mass: Vec<T> = map.data().iter().zip(w.data()).map(|(&s, &wi)| s * wi).collect();
    let total = pairwise_sum(&mass);
    if !(total > T::zero()) {
        return Err(Error::degenerate(format!("{what} has zero mass")));
    }
    Ok(mass.into_iter().map(|m| m / total).collect())
}

/// KLD between solid-angle-weighted, L1-normalized distributions with
/// `ε = 1e−8` smoothing.
pub fn kld_metric<T: Real>(pred: &Grid<T>, gt: &Grid<T>, direction: KldDirection) -> Result<T> {
    pred.ensure_same_shape(gt)?;
    let w = check_map(pred)?;
    let p = sphere_distribution(pred, &w, "prediction")?;
    let q = sphere_distribution(gt, &w, "ground truth")?;
    let (reference, other) = match direction {
        KldDirection::GroundTruthToPrediction => (&q, &p),
        KldDirection::PredictionToGroundTruth => (&p, &q),
    };
    let eps = T::lit(KLD_EPS);
    let terms: Vec<T> = reference
        .iter()
        .zip(other)
        .map(|(&r, &o)| r * ((r + eps) / (o + eps)).ln())
        .collect();
    Ok(pairwise_sum(&terms))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandNss {
    pub elevation_deg: f64,
    pub nss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub weighting: String,
    pub nss_zscore: String,
    pub auc_variant: String,
    pub kld_direction: KldDirection,
    pub band_width_deg: f64,
}

/// Metrics for one predicted ERP map. Fields are absent when the inputs
/// they need (fixations or a ground-truth map) were not given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nss: Option<f64>,
    pub auc: Option<f64>,
    pub cc: Option<f64>,
    pub kld: Option<f64>,
    pub nss_by_elevation: Vec<BandNss>,
    pub meta: ReportMeta,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub band_width_deg: f64,
    pub kld_direction: KldDirection,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            band_width_deg: 30.0,
            kld_direction: KldDirection::default(),
        }
    }
}

pub fn evaluate<T: Real>(
    pred: &Grid<T>,
    gt: Option<&Grid<T>>,
    fix: Option<&FixationSet<T>>,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let f64_of = |v: T| v.to_f64_lossy();
    let (mut nss_v, mut auc_v, mut bands) = (None, None, Vec::new());
    if let Some(fix) = fix {
        nss_v = Some(f64_of(nss(pred, fix)?));
        auc_v = Some(f64_of(auc(pred, fix)?));
        bands = nss_by_elevation(pred, fix, T::lit(opts.band_width_deg.to_radians()))?
            .into_iter()
            .map(|(c, v)| BandNss {
                elevation_deg: f64_of(c).to_degrees(),
                nss: f64_of(v),
            })
            .collect();
    }
    let (mut cc_v, mut kld_v) = (None, None);
    if let Some(gt) = gt {
        cc_v = Some(f64_of(cc(pred, gt)?));
        kld_v = Some(f64_of(kld_metric(pred, gt, opts.kld_direction)?));
    }
    Ok(MetricReport {
        nss: nss_v,
        auc: auc_v,
        cc: cc_v,
        kld: kld_v,
        nss_by_elevation: bands,
        meta: ReportMeta {
            weighting: "solid-angle (cos latitude)".into(),
            nss_zscore: "solid-angle-weighted mean and std".into(),
            auc_variant: "judd (tie-grouped thresholds)".into(),
            kld_direction: opts.kld_direction,
            band_width_deg: opts.band_width_deg,
        },
    })
}
