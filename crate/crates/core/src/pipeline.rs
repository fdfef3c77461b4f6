//! End-to-end commands. Every command validates its configuration, computes
//! all outputs in memory, and only then writes files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{PatchKey, Prediction, SaliencyBackend};
use crate::bias::{l1_normalize, l1_normalize_weighted, BiasGrid};
use crate::config::{BiasMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::geometry::{solid_angle_weights, sphere_to_erp, ViewFrustum};
use crate::grid::Grid;
use crate::io::{self, fixations, osb1, pfm};
use crate::learning::{train_attention, train_bias_fused, AttentionSample, SceneSample};
use crate::metrics::{evaluate, EvalOptions, FixationSet, MetricReport};
use crate::multiscale::{attention_forward, crop_resize_to_smallest, integrate, AttentionParams};
use crate::patching::{extract_patch, generate_view_directions, sample_erp, ReprojectionPlan, Sampler};

/// Viewing directions and one frustum per (direction, angle of view).
#[derive(Clone, Debug)]
pub struct Layout {
    pub aovs: Vec<f64>,
    /// `frusta[d][a]`
    pub frusta: Vec<Vec<ViewFrustum<f64>>>,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        let dirs = generate_view_directions(cfg.interval_deg.to_radians())?;
        let aovs = cfg.aovs_rad();
        let frusta = dirs
            .directions
            .iter()
            .map(|&d| {
                aovs.iter()
                    .map(|&a| ViewFrustum::new(d, a, a, cfg.patch_width, cfg.patch_height))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Layout { aovs, frusta })
    }

    pub fn directions(&self) -> usize {
        self.frusta.len()
    }

    /// Frusta at the smallest angle of view, which define the fused output.
    pub fn reference_frusta(&self) -> Vec<ViewFrustum<f64>> {
        self.frusta.iter().map(|f| f[0]).collect()
    }

    pub fn elevations(&self) -> Vec<f64> {
        self.frusta.iter().map(|f| f[0].direction().elevation()).collect()
    }

    pub fn key(&self, d: usize, a: usize) -> PatchKey {
        PatchKey::new(d, self.aovs[a].to_degrees())
    }
}

/// Prior applied to raw backend output.
#[derive(Clone, Debug)]
pub enum BiasStage {
    None,
    /// ERP prior map, sampled into every patch.
    Prior(Grid<f64>),
    Learned(BiasGrid<f64>),
}

impl BiasStage {
    pub fn apply(&self, raw: &Grid<f64>, frustum: &ViewFrustum<f64>) -> Result<Grid<f64>> {
        match self {
            BiasStage::None => Ok(raw.clone()),
            BiasStage::Learned(b) => b.apply(raw, frustum.direction().elevation()),
            BiasStage::Prior(prior) => {
                let mut out = raw.clone();
                for r in 0..raw.rows() {
                    for c in 0..raw.cols() {
                        let d = frustum.patch_to_sphere(c as f64, r as f64);
                        let (x, y) = sphere_to_erp(prior.rows(), prior.cols(), d);
                        let w = sample_erp(prior, x, y, 0, Sampler::Bilinear);
                        out.set(r, c, 0, raw.get(r, c, 0) * w);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Bring an input raster to the configured ERP size.
pub fn conform_erp(img: Grid<f64>, cfg: &PipelineConfig) -> Grid<f64> {
    if img.rows() == cfg.erp_height && img.cols() == cfg.erp_width {
        img
    } else {
        log::info!(
            "resizing {}x{} input to {}x{}",
            img.rows(),
            img.cols(),
            cfg.erp_height,
            cfg.erp_width
        );
        img.resize_bilinear(cfg.erp_height, cfg.erp_width)
    }
}

/// Extract, predict and bias every patch of one direction (ascending aov).
pub fn direction_predictions(
    erp: &Grid<f64>,
    layout: &Layout,
    d: usize,
    backend: &dyn SaliencyBackend<f64>,
    bias: &BiasStage,
) -> Result<Vec<Prediction<f64>>> {
    (0..layout.aovs.len())
        .map(|a| {
            let key = layout.key(d, a);
            let frustum = &layout.frusta[d][a];
            let patch = extract_patch(erp, frustum, Sampler::Bilinear).map_err(|e| e.in_stage("extract", key))?;
            let mut pred = backend.predict(&key, &patch).map_err(|e| e.in_stage("backend", key))?;
            pred.saliency = bias
                .apply(&pred.saliency, frustum)
                .map_err(|e| e.in_stage("bias", key))?;
            Ok(pred)
        })
        .collect()
}

/// Integrate the angles of view of one direction into a single map.
pub fn fuse_direction(
    preds: &[Prediction<f64>],
    aovs: &[f64],
    attention: Option<&AttentionParams<f64>>,
) -> Result<Grid<f64>> {
    if preds.len() == 1 {
        return Ok(preds[0].saliency.clone());
    }
    let maps: Vec<Grid<f64>> = preds.iter().map(|p| p.saliency.clone()).collect();
    let stack = crop_resize_to_smallest(&maps, aovs)?;
    let params = attention.ok_or_else(|| Error::invalid("several angles of view need attention parameters"))?;
    let weights = attention_forward(&stack, params, preds[0].features.as_ref())?;
    integrate(&stack, &weights)
}

/// Full model on one ERP image. The result sums to 1 (plain or solid-angle
/// weighted, per the configuration).
pub fn predict_erp(
    erp: &Grid<f64>,
    cfg: &PipelineConfig,
    layout: &Layout,
    plan: &ReprojectionPlan,
    backend: &dyn SaliencyBackend<f64>,
    bias: &BiasStage,
    attention: Option<&AttentionParams<f64>>,
) -> Result<Grid<f64>> {
    let fused: Vec<Grid<f64>> = (0..layout.directions())
        .into_par_iter()
        .map(|d| {
            let preds = direction_predictions(erp, layout, d, backend, bias)?;
            fuse_direction(&preds, &layout.aovs, attention)
                .map_err(|e| e.in_stage("integrate", format!("d{d}")))
        })
        .collect::<Result<_>>()?;
    let map = plan
        .apply(&fused.iter().collect::<Vec<_>>())
        .map_err(|e| e.in_stage("reproject", "erp"))?;
    normalize_output(&map, cfg).map_err(|e| e.in_stage("normalize", "erp"))
}

fn normalize_output(map: &Grid<f64>, cfg: &PipelineConfig) -> Result<Grid<f64>> {
    if cfg.sphere_weighted_l1 {
        let w = solid_angle_weights(map.rows(), map.cols())?;
        l1_normalize_weighted(map, &w)
    } else {
        l1_normalize(map)
    }
}

/// One training or evaluation scene: an ERP image and its ground-truth map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneEntry {
    pub image: PathBuf,
    pub saliency: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub scenes: Vec<SceneEntry>,
}

impl Dataset {
    /// Paths inside the manifest are relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ds: Dataset = serde_json::from_str(&text).map_err(|e| Error::Format {
            format: "dataset JSON",
            reason: e.to_string(),
        })?;
        if ds.scenes.is_empty() {
            return Err(Error::invalid("dataset has no scenes"));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for s in &mut ds.scenes {
            s.image = base.join(&s.image);
            s.saliency = base.join(&s.saliency);
        }
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command run. Apart from `timings_ms`, two runs with the same
/// inputs and configuration produce identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: PipelineConfig,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
    pub timings_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    fn new(command: &str, cfg: &PipelineConfig) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: cfg.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    fn hash_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(InputHash {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    fn time(&mut self, stage: &str, start: Instant) {
        self.timings_ms
            .insert(stage.into(), start.elapsed().as_secs_f64() * 1e3);
    }
}

/// Files produced by a command, written together once everything succeeded.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn commit(self, mut manifest: RunManifest) -> Result<RunManifest> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        manifest.outputs = self.files.iter().map(|(n, _)| self.dir.join(n)).collect();
        let manifest_path = self.dir.join("manifest.json");
        manifest.outputs.push(manifest_path.clone());
        for (name, bytes) in &self.files {
            let p = self.dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        }
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest)
    }
}

fn load_erp(path: &Path, cfg: &PipelineConfig) -> Result<Grid<f64>> {
    Ok(conform_erp(io::read_image(path)?, cfg))
}

/// Write every (direction, aov) patch of an ERP image as `d{idx}_a{aov}.pfm`.
pub fn cmd_extract(image: &Path, cfg: &PipelineConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("extract", cfg);
    let t = Instant::now();
    manifest.hash_input(image)?;
    let erp = load_erp(image, cfg)?;
    let layout = Layout::new(cfg)?;
    let jobs: Vec<(usize, usize)> = (0..layout.directions())
        .flat_map(|d| (0..layout.aovs.len()).map(move |a| (d, a)))
        .collect();
    let encoded: Vec<(String, Vec<u8>)> = jobs
        .par_iter()
        .map(|&(d, a)| {
            let key = layout.key(d, a);
            let patch = extract_patch(&erp, &layout.frusta[d][a], Sampler::Bilinear)
                .map_err(|e| e.in_stage("extract", key))?;
            Ok((key.file_name(), pfm::encode(&patch.data)?))
        })
        .collect::<Result<_>>()?;
    let mut outputs = Outputs::new(out);
    for (name, bytes) in encoded {
        outputs.add(name, bytes);
    }
    manifest.time("extract", t);
    outputs.commit(manifest)
}

/// Optional parameter and evaluation inputs of [`cmd_pipeline`].
#[derive(Clone, Debug, Default)]
pub struct PipelineInputs {
    pub bias_params: Option<PathBuf>,
    pub attention_params: Option<PathBuf>,
    /// ERP prior for the `constant` bias mode.
    pub prior: Option<PathBuf>,
    pub fixations: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
}

/// Resolve the bias stage for the configured mode.
pub fn load_bias_stage(cfg: &PipelineConfig, bias_params: Option<&Path>, prior: Option<&Path>) -> Result<BiasStage> {
    let [gh, gw] = cfg.bias_grid;
    match cfg.bias {
        BiasMode::None => Ok(BiasStage::None),
        BiasMode::Constant => {
            let path = prior.ok_or_else(|| Error::invalid("bias mode constant needs a prior map"))?;
            let prior: Grid<f64> = pfm::read(path)?.cast();
            if prior.channels() != 1 {
                return Err(Error::shape("single-channel prior", prior.shape_str()));
            }
            prior.ensure_saliency("prior")?;
            Ok(BiasStage::Prior(prior))
        }
        BiasMode::Single | BiasMode::Multi => {
            let grid = match bias_params {
                Some(p) => osb1::read_bias(p)?,
                None => {
                    log::warn!("no bias parameters given; using an identity bias grid");
                    if cfg.bias == BiasMode::Single {
                        BiasGrid::single(gh, gw)
                    } else {
                        BiasGrid::equator(gh, gw)
                    }
                }
            };
            let single = grid.channels() == 1;
            if single != (cfg.bias == BiasMode::Single) {
                return Err(Error::invalid(format!(
                    "bias mode {:?} does not match a {}-channel bias grid",
                    cfg.bias,
                    grid.channels()
                )));
            }
            Ok(BiasStage::Learned(grid))
        }
    }
}

fn feature_channels(cfg: &PipelineConfig, backend: &dyn SaliencyBackend<f64>) -> Result<usize> {
    if cfg.arch.uses_features() {
        backend
            .feature_channels()
            .ok_or(Error::MissingFeatures(cfg.arch.number()))
    } else {
        Ok(cfg.aovs_deg.len())
    }
}

/// Load attention parameters, or initialize them from the seed when absent.
/// Returns `None` for a single angle of view.
pub fn load_attention(
    cfg: &PipelineConfig,
    backend: &dyn SaliencyBackend<f64>,
    path: Option<&Path>,
) -> Result<Option<AttentionParams<f64>>> {
    let n = cfg.aovs_deg.len();
    if n == 1 {
        return Ok(None);
    }
    let in_ch = feature_channels(cfg, backend)?;
    let params = match path {
        Some(p) => osb1::read_attention(p)?,
        None => {
            log::warn!("no attention parameters given; using seeded initialization");
            AttentionParams::init(cfg.arch, in_ch, cfg.attention_hidden, n, cfg.seed)?
        }
    };
    if params.arch != cfg.arch {
        return Err(Error::invalid(format!(
            "attention file holds architecture {}, config asks for {}",
            params.arch.number(),
            cfg.arch.number()
        )));
    }
    if params.input_channels() != in_ch || params.output_channels() != n {
        return Err(Error::shape(
            format!("{in_ch} inputs and {n} outputs"),
            format!("{} inputs and {} outputs", params.input_channels(), params.output_channels()),
        ));
    }
    Ok(Some(params))
}

/// Produce `saliency.pfm` for one ERP image, plus `metrics.json` when
/// fixations or a ground-truth map are given.
pub fn cmd_pipeline(image: &Path, inputs: &PipelineInputs, cfg: &PipelineConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let mut manifest = RunManifest::new("pipeline", cfg);
    let t = Instant::now();
    manifest.hash_input(image)?;
    for p in [
        &inputs.bias_params,
        &inputs.attention_params,
        &inputs.prior,
        &inputs.fixations,
        &inputs.ground_truth,
    ]
    .into_iter()
    .flatten()
    {
        manifest.hash_input(p)?;
    }
    let backend = cfg.backend.build();
    let bias = load_bias_stage(cfg, inputs.bias_params.as_deref(), inputs.prior.as_deref())?;
    let attention = load_attention(cfg, backend.as_ref(), inputs.attention_params.as_deref())?;
    let fix: Option<FixationSet<f64>> = inputs.fixations.as_deref().map(fixations::read).transpose()?;
    let gt = inputs
        .ground_truth
        .as_deref()
        .map(|p| load_erp(p, cfg))
        .transpose()?;
    let erp = load_erp(image, cfg)?;
    let layout = Layout::new(cfg)?;
    let plan = ReprojectionPlan::new(&layout.reference_frusta(), cfg.erp_height, cfg.erp_width)?;
    if plan.uncovered() > 0 {
        log::warn!("{} ERP pixels are not covered by any patch", plan.uncovered());
    }
    manifest.time("setup", t);

    let t = Instant::now();
    let saliency = predict_erp(&erp, cfg, &layout, &plan, backend.as_ref(), &bias, attention.as_ref())?;
    manifest.time("predict", t);

    let mut outputs = Outputs::new(out);
    outputs.add("saliency.pfm", pfm::encode(&saliency)?);
    if fix.is_some() || gt.is_some() {
        let t = Instant::now();
        let report = evaluate(&saliency, gt.as_ref(), fix.as_ref(), &EvalOptions::default())?;
        outputs.add("metrics.json", report_json(&report));
        manifest.time("evaluate", t);
    }
    outputs.commit(manifest)
}

fn report_json(report: &MetricReport) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

fn load_scene(entry: &SceneEntry, cfg: &PipelineConfig, manifest: &mut RunManifest) -> Result<(Grid<f64>, Grid<f64>)> {
    manifest.hash_input(&entry.image)?;
    manifest.hash_input(&entry.saliency)?;
    let img = load_erp(&entry.image, cfg)?;
    let gt = load_erp(&entry.saliency, cfg)?;
    gt.ensure_saliency(&entry.saliency.display().to_string())?;
    Ok((img, gt))
}

/// Train a single- or multi-channel bias grid on the smallest angle of view,
/// against the fused ERP map of every scene.
pub fn cmd_biasfit(dataset: &Path, init: Option<&Path>, cfg: &PipelineConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let [gh, gw] = cfg.bias_grid;
    let start = match (cfg.bias, init) {
        (BiasMode::Single | BiasMode::Multi, Some(p)) => osb1::read_bias(p)?,
        (BiasMode::Single, None) => BiasGrid::single(gh, gw),
        (BiasMode::Multi, None) => BiasGrid::equator(gh, gw),
        (mode, _) => {
            return Err(Error::invalid(format!("biasfit needs bias mode single or multi, got {mode:?}")))
        }
    };
    let ds = Dataset::load(dataset)?;
    let mut manifest = RunManifest::new("biasfit", cfg);
    manifest.hash_input(dataset)?;
    let t = Instant::now();
    let layout = Layout::new(cfg)?;
    let frusta = layout.reference_frusta();
    let plan = ReprojectionPlan::new(&frusta, cfg.erp_height, cfg.erp_width)?;
    let backend = cfg.backend.build();
    let mut scenes = Vec::with_capacity(ds.scenes.len());
    for (i, entry) in ds.scenes.iter().enumerate() {
        let (img, gt) = load_scene(entry, cfg, &mut manifest).map_err(|e| e.in_sample(i))?;
        let raw = (0..layout.directions())
            .into_par_iter()
            .map(|d| {
                let key = layout.key(d, 0);
                let patch = extract_patch(&img, &frusta[d], Sampler::Bilinear)?;
                Ok(backend.predict(&key, &patch)?.saliency)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_sample(i))?;
        scenes.push(SceneSample {
            raw,
            target: l1_normalize(&gt).map_err(|e| e.in_sample(i))?,
        });
    }
    manifest.time("prepare", t);
    let t = Instant::now();
    let trained = train_bias_fused(&scenes, &plan, &layout.elevations(), start, &cfg.train)?;
    manifest.time("train", t);
    let mut outputs = Outputs::new(out);
    outputs.add("bias.osb1", osb1::encode_bias(&trained.params)?);
    outputs.add("bias_loss.csv", io::loss_csv(&trained.losses).into_bytes());
    outputs.commit(manifest)
}

/// Train the integration layer on per-direction targets: the ground truth
/// resampled into each smallest-aov patch.
pub fn cmd_attnfit(
    dataset: &Path,
    inputs: &PipelineInputs,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<RunManifest> {
    cfg.validate()?;
    if cfg.aovs_deg.len() < 2 {
        return Err(Error::invalid("attnfit needs at least two angles of view"));
    }
    let ds = Dataset::load(dataset)?;
    let mut manifest = RunManifest::new("attnfit", cfg);
    manifest.hash_input(dataset)?;
    let t = Instant::now();
    let backend = cfg.backend.build();
    let bias = load_bias_stage(cfg, inputs.bias_params.as_deref(), inputs.prior.as_deref())?;
    let start = load_attention(cfg, backend.as_ref(), inputs.attention_params.as_deref())?
        .expect("several angles of view");
    let layout = Layout::new(cfg)?;
    let mut samples = Vec::new();
    for (i, entry) in ds.scenes.iter().enumerate() {
        let (img, gt) = load_scene(entry, cfg, &mut manifest).map_err(|e| e.in_sample(i))?;
        let per_dir = (0..layout.directions())
            .into_par_iter()
            .map(|d| attention_sample(&img, &gt, &layout, d, backend.as_ref(), &bias))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_sample(i))?;
        samples.extend(per_dir.into_iter().flatten());
    }
    manifest.time("prepare", t);
    let t = Instant::now();
    let trained = train_attention(&samples, start, &cfg.train)?;
    manifest.time("train", t);
    let mut outputs = Outputs::new(out);
    outputs.add("attention.osb1", osb1::encode_attention(&trained.params)?);
    outputs.add("attention_loss.csv", io::loss_csv(&trained.losses).into_bytes());
    outputs.commit(manifest)
}

/// Training sample for one direction, or `None` when the ground truth has no
/// mass inside the patch.
pub fn attention_sample(
    img: &Grid<f64>,
    gt: &Grid<f64>,
    layout: &Layout,
    d: usize,
    backend: &dyn SaliencyBackend<f64>,
    bias: &BiasStage,
) -> Result<Option<AttentionSample<f64>>> {
    let preds = direction_predictions(img, layout, d, backend, bias)?;
    let target = extract_patch(gt, &layout.frusta[d][0], Sampler::Bilinear)?.data;
    if !(target.sum() > 0.0) {
        return Ok(None);
    }
    let maps: Vec<Grid<f64>> = preds.iter().map(|p| p.saliency.clone()).collect();
    Ok(Some(AttentionSample {
        stack: crop_resize_to_smallest(&maps, &layout.aovs)?,
        features: preds[0].features.clone(),
        target: l1_normalize(&target)?,
    }))
}

/// Score a predicted ERP map against fixations and/or a ground-truth map.
pub fn cmd_evaluate(
    prediction: &Path,
    ground_truth: Option<&Path>,
    fixation_file: Option<&Path>,
    opts: &EvalOptions,
    out: &Path,
) -> Result<MetricReport> {
    if ground_truth.is_none() && fixation_file.is_none() {
        return Err(Error::invalid("evaluate needs fixations, a ground-truth map, or both"));
    }
    if !(opts.band_width_deg > 0.0 && opts.band_width_deg <= 180.0) {
        return Err(Error::invalid("band width must be in (0, 180] degrees"));
    }
    let pred: Grid<f64> = io::read_image(prediction)?;
    let gt = ground_truth.map(io::read_image::<f64>).transpose()?;
    let fix = fixation_file.map(fixations::read::<f64>).transpose()?;
    let report = evaluate(&pred, gt.as_ref(), fix.as_ref(), opts)?;
    let bytes = report_json(&report);
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(out, bytes).map_err(|e| Error::io(out, e))?;
    Ok(report)
}

/// Average of the L1-normalized ground-truth maps of a dataset.
pub fn average_prior(maps: &[Grid<f64>]) -> Result<Grid<f64>> {
    let first = maps.first().ok_or_else(|| Error::invalid("no maps to average"))?;
    let mut acc = Grid::zeros(first.rows(), first.cols(), 1);
    for (i, m) in maps.iter().enumerate() {
        let n = l1_normalize(m).map_err(|e| e.in_sample(i))?;
        acc.ensure_same_shape(&n).map_err(|e| e.in_sample(i))?;
        for (a, v) in acc.data_mut().iter_mut().zip(n.data()) {
            *a += v;
        }
    }
    let k = maps.len() as f64;
    Ok(acc.map(|v| v / k))
}

/// Write `prior.pfm` (usable as the `constant` bias) and `prior.png`.
pub fn cmd_plotprior(dataset: &Path, cfg: &PipelineConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    let ds = Dataset::load(dataset)?;
    let mut manifest = RunManifest::new("plotprior", cfg);
    manifest.hash_input(dataset)?;
    let t = Instant::now();
    let maps = ds
        .scenes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            manifest.hash_input(&s.saliency)?;
            load_erp(&s.saliency, cfg).map_err(|e| e.in_sample(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let prior = average_prior(&maps)?;
    manifest.time("average", t);
    let mut outputs = Outputs::new(out);
    outputs.add("prior.pfm", pfm::encode(&prior)?);
    outputs.add("prior.png", io::encode_png(&prior)?);
    outputs.commit(manifest)
}
