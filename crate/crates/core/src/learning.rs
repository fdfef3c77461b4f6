//! KLD loss with L1 normalization, RMSProp, and the trainers for bias grids
//! and attention parameters. Backbone outputs are treated as fixed inputs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bias::{apply_plane, plane_gradient, BiasGrid, BIAS_FLOOR};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::multiscale::{integrate, integrate_backward, AttentionGrads, AttentionParams, ScaleStack};
use crate::patching::ReprojectionPlan;
use crate::scalar::{pairwise_sum, Real};

/// Smoothing constant added to both distributions inside the KLD.
pub const KLD_EPS: f64 = 1e-8;

/// `Σ q·ln((q + ε)/(p + ε))` over L1-normalized `target` (q) and `pred` (p),
/// with the gradient w.r.t. the unnormalized `pred`.
pub fn kld_loss<T: Real>(pred: &Grid<T>, target: &Grid<T>) -> Result<(T, Grid<T>)> {
    pred.ensure_same_shape(target)?;
    pred.ensure_saliency("prediction")?;
    target.ensure_saliency("target")?;
    let sp = pred.sum();
    let st = target.sum();
    if !(sp > T::zero()) {
        return Err(Error::degenerate("prediction sums to zero"));
    }
    if !(st > T::zero()) {
        return Err(Error::degenerate("target sums to zero"));
    }
    let eps = T::lit(KLD_EPS);
    let n = pred.len();
    let mut terms = Vec::with_capacity(n);
    // g = ∂L/∂P
    let mut g = Vec::with_capacity(n);
    let mut gp = Vec::with_capacity(n);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let pn = p / sp;
        let q = t / st;
        terms.push(q * ((q + eps) / (pn + eps)).ln());
        let gi = -q / (pn + eps);
        g.push(gi);
        gp.push(gi * pn);
    }
    let loss = pairwise_sum(&terms);
    let dot = pairwise_sum(&gp);
    let grad = g.into_iter().map(|gi| (gi - dot) / sp).collect();
    Ok((loss, Grid::from_vec(pred.rows(), pred.cols(), pred.channels(), grad)?))
}

/// RMSProp: `v ← ρv + (1 − ρ)g²`, `θ ← θ − lr·g/√(v + ε)`.
#[derive(Clone, Debug)]
pub struct RmsProp<T> {
    pub rho: T,
    pub eps: T,
    /// Running mean of squared gradients, one buffer per parameter tensor.
    pub state: Vec<Vec<T>>,
}

impl<T: Real> RmsProp<T> {
    pub fn new(rho: T, eps: T) -> Self {
        RmsProp {
            rho,
            eps,
            state: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], lr: T) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!("{} gradient tensors", params.len()), grads.len()));
        }
        if self.state.is_empty() {
            self.state = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        }
        if self.state.len() != params.len() {
            return Err(Error::shape(format!("{} state tensors", self.state.len()), params.len()));
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.state) {
            if p.len() != g.len() || p.len() != v.len() {
                return Err(Error::shape(p.len(), g.len()));
            }
            for ((pi, &gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.rho * *vi + (T::one() - self.rho) * gi * gi;
                *pi -= lr * gi / (*vi + self.eps).sqrt();
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_bias: f64,
    pub lr_attention: f64,
    pub rho: f64,
    pub eps: f64,
    pub epochs: usize,
    /// Optional hard cap on optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_bias: 1e-4,
            lr_attention: 1e-5,
            rho: 0.9,
            eps: 1e-8,
            epochs: 5,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_bias >= 0.0 && self.lr_attention >= 0.0) {
            return Err(Error::invalid("learning rates must be non-negative"));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("RMSProp decay {} outside (0, 1)", self.rho)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::invalid("RMSProp epsilon must be positive"));
        }
        Ok(())
    }

    fn schedule(&self, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut order = Vec::with_capacity(n * self.epochs);
        for _ in 0..self.epochs {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            order.extend(idx);
        }
        if let Some(cap) = self.max_steps {
            order.truncate(cap);
        }
        order
    }
}

/// One patch-level bias training example.
#[derive(Clone, Debug)]
pub struct BiasSample<T> {
    pub raw: Grid<T>,
    pub elevation: T,
    pub target: Grid<T>,
}

/// Loss and gradient w.r.t. every bias weight (`gh × gw × K`) for one patch.
pub fn bias_loss_grad<T: Real>(bias: &BiasGrid<T>, sample: &BiasSample<T>) -> Result<(T, Grid<T>)> {
    let (gh, gw) = (bias.grid_rows(), bias.grid_cols());
    let k = bias.select_channel(sample.elevation);
    let out = apply_plane(&sample.raw, &bias.plane(k), gh, gw)?;
    let (loss, g) = kld_loss(&out, &sample.target)?;
    let gp = plane_gradient(&sample.raw, &g, gh, gw);
    let mut full = Grid::zeros(gh, gw, bias.channels());
    for (i, v) in gp.into_iter().enumerate() {
        full.data_mut()[i * bias.channels() + k] = v;
    }
    Ok((loss, full))
}

/// Output of a training run.
#[derive(Clone, Debug)]
pub struct Trained<P, T> {
    pub params: P,
    /// Loss before each optimizer step.
    pub losses: Vec<T>,
}

fn bias_step<T: Real>(
    bias: &mut BiasGrid<T>,
    opt: &mut RmsProp<T>,
    grad: &Grid<T>,
    lr: T,
) -> Result<()> {
    let mut w = bias.weights().clone();
    opt.step(&mut [w.data_mut()], &[grad.data()], lr)?;
    *bias = BiasGrid::from_parts(w.map(|v| v.max(T::lit(BIAS_FLOOR))), bias.elevations().to_vec())?;
    Ok(())
}

/// Batch-size-1 RMSProp on per-patch KLD, updating only the bias grid.
pub fn train_bias<T: Real>(
    samples: &[BiasSample<T>],
    mut bias: BiasGrid<T>,
    cfg: &TrainConfig,
) -> Result<Trained<BiasGrid<T>, T>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("empty bias training set"));
    }
    let mut opt = RmsProp::new(T::lit(cfg.rho), T::lit(cfg.eps));
    let mut losses = Vec::new();
    for i in cfg.schedule(samples.len()) {
        let (loss, grad) = bias_loss_grad(&bias, &samples[i]).map_err(|e| e.in_sample(i))?;
        losses.push(loss);
        bias_step(&mut bias, &mut opt, &grad, T::lit(cfg.lr_bias))?;
    }
    Ok(Trained {
        params: bias,
        losses,
    })
}

/// One scene for fused bias training: raw backend maps for every patch of a
/// reprojection plan, and the ERP ground-truth saliency.
#[derive(Clone, Debug)]
pub struct SceneSample<T> {
    pub raw: Vec<Grid<T>>,
    pub target: Grid<T>,
}

/// Bias every patch, reproject, and return the fused (unnormalized) ERP map.
pub fn fused_biased_map<T: Real>(
    bias: &BiasGrid<T>,
    plan: &ReprojectionPlan,
    elevations: &[T],
    raw: &[Grid<T>],
) -> Result<Grid<T>> {
    let biased = raw
        .iter()
        .zip(elevations)
        .map(|(r, &e)| bias.apply(r, e))
        .collect::<Result<Vec<_>>>()?;
    plan.apply(&biased.iter().collect::<Vec<_>>())
}

/// KLD of the fused ERP map against the scene target and its gradient
/// w.r.t. every bias weight.
pub fn fused_bias_loss_grad<T: Real>(
    bias: &BiasGrid<T>,
    plan: &ReprojectionPlan,
    elevations: &[T],
    scene: &SceneSample<T>,
) -> Result<(T, Grid<T>)> {
    if scene.raw.len() != plan.patch_count() || elevations.len() != plan.patch_count() {
        return Err(Error::shape(format!("{} patches", plan.patch_count()), scene.raw.len()));
    }
    let fused = fused_biased_map(bias, plan, elevations, &scene.raw)?;
    let (loss, g) = kld_loss(&fused, &scene.target)?;
    let per_patch = plan.apply_adjoint(&g)?;
    let (gh, gw, kc) = (bias.grid_rows(), bias.grid_cols(), bias.channels());
    let mut full = Grid::zeros(gh, gw, kc);
    for ((raw, gp), &e) in scene.raw.iter().zip(&per_patch).zip(elevations) {
        let k = bias.select_channel(e);
        for (i, v) in plane_gradient(raw, gp, gh, gw).into_iter().enumerate() {
            full.data_mut()[i * kc + k] += v;
        }
    }
    Ok((loss, full))
}

/// Batch-size-1 (one scene per step) RMSProp on the KLD of the fused ERP map.
/// Unlike per-patch training this keeps the relative level of each elevation
/// channel identifiable.
pub fn train_bias_fused<T: Real>(
    scenes: &[SceneSample<T>],
    plan: &ReprojectionPlan,
    elevations: &[T],
    mut bias: BiasGrid<T>,
    cfg: &TrainConfig,
) -> Result<Trained<BiasGrid<T>, T>> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::invalid("empty bias training set"));
    }
    let mut opt = RmsProp::new(T::lit(cfg.rho), T::lit(cfg.eps));
    let mut losses = Vec::new();
    for i in cfg.schedule(scenes.len()) {
        let (loss, grad) =
            fused_bias_loss_grad(&bias, plan, elevations, &scenes[i]).map_err(|e| e.in_sample(i))?;
        losses.push(loss);
        bias_step(&mut bias, &mut opt, &grad, T::lit(cfg.lr_bias))?;
    }
    Ok(Trained {
        params: bias,
        losses,
    })
}

/// One viewing direction for attention training.
#[derive(Clone, Debug)]
pub struct AttentionSample<T> {
    pub stack: ScaleStack<T>,
    pub features: Option<Grid<T>>,
    pub target: Grid<T>,
}

/// KLD of the integrated map and its gradient w.r.t. all attention parameters.
pub fn attention_loss_grad<T: Real>(
    params: &AttentionParams<T>,
    sample: &AttentionSample<T>,
) -> Result<(T, AttentionGrads<T>)> {
    let input = params.assemble_input(&sample.stack, sample.features.as_ref())?;
    let cache = params.forward_cached(input)?;
    let fused = integrate(&sample.stack, &cache.weights)?;
    let (loss, g) = kld_loss(&fused, &sample.target)?;
    let gw = integrate_backward(&sample.stack, &g);
    Ok((loss, params.backward(&cache, &gw)))
}

/// Batch-size-1 RMSProp on per-direction KLD of the integrated map.
pub fn train_attention<T: Real>(
    samples: &[AttentionSample<T>],
    mut params: AttentionParams<T>,
    cfg: &TrainConfig,
) -> Result<Trained<AttentionParams<T>, T>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("empty attention training set"));
    }
    let mut opt = RmsProp::new(T::lit(cfg.rho), T::lit(cfg.eps));
    let mut losses = Vec::new();
    let lr = T::lit(cfg.lr_attention);
    for i in cfg.schedule(samples.len()) {
        let (loss, grads) = attention_loss_grad(&params, &samples[i]).map_err(|e| e.in_sample(i))?;
        losses.push(loss);
        let g = grads.tensors();
        opt.step(&mut params.tensors_mut(), &g, lr)?;
    }
    Ok(Trained { params, losses })
}
