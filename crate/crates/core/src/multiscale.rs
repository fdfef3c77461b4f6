//! Multi-angle-of-view alignment and pixel-wise attention integration.
//!
//! Saliency maps predicted at several angles of view around one viewing
//! direction are cropped and resized onto the field of the smallest angle,
//! then blended per pixel with softmax weights produced by a small
//! convolutional attention module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::focal_length;
use crate::grid::Grid;
use crate::scalar::Real;

/// `N` single-channel maps aligned to the smallest angle of view.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleStack<T> {
    maps: Vec<Grid<T>>,
    aovs: Vec<T>,
}

impl<T: Real> ScaleStack<T> {
    /// Wrap already aligned maps.
    pub fn new(maps: Vec<Grid<T>>, aovs: Vec<T>) -> Result<Self> {
        check_aovs(&aovs, maps.len())?;
        let first = &maps[0];
        for m in &maps {
            if m.channels() != 1 || m.rows() != first.rows() || m.cols() != first.cols() {
                return Err(Error::shape(
                    format!("{}x{}x1", first.rows(), first.cols()),
                    m.shape_str(),
                ));
            }
        }
        Ok(ScaleStack { maps, aovs })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn maps(&self) -> &[Grid<T>] {
        &self.maps
    }

    pub fn aovs(&self) -> &[T] {
        &self.aovs
    }

    pub fn rows(&self) -> usize {
        self.maps[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.maps[0].cols()
    }

    /// Maps as one `H × W × N` grid.
    pub fn concatenated(&self) -> Grid<T> {
        Grid::stack(&self.maps).expect("stack shapes validated on construction")
    }
}

fn check_aovs<T: Real>(aovs: &[T], n: usize) -> Result<()> {
    if n == 0 || aovs.len() != n {
        return Err(Error::shape(format!("{n} angles of view (n >= 1)"), aovs.len()));
    }
    for w in aovs.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::invalid("angles of view must be strictly increasing"));
        }
    }
    Ok(())
}

/// Crop every map to the field of view of the smallest angle and resize it
/// back to `H × W`. A map at angle `α` keeps the centered window of half-width
/// `f(α)·tan(α_min / 2)` pixels, where `f` is its focal length.
pub fn crop_resize_to_smallest<T: Real>(maps: &[Grid<T>], aovs: &[T]) -> Result<ScaleStack<T>> {
    check_aovs(aovs, maps.len())?;
    let (rows, cols) = (maps[0].rows(), maps[0].cols());
    let two = T::lit(2.0);
    let min_tan = (aovs[0] / two).tan();
    let mut out = Vec::with_capacity(maps.len());
    for (k, (m, &aov)) in maps.iter().zip(aovs).enumerate() {
        if m.rows() != rows || m.cols() != cols || m.channels() != 1 {
            return Err(Error::shape(format!("{rows}x{cols}x1"), m.shape_str()));
        }
        focal_length(aov, cols)?;
        if k == 0 {
            out.push(m.clone());
            continue;
        }
        let ratio = min_tan / (aov / two).tan();
        let cx = T::from_usize_lossy(cols - 1) / two;
        let cy = T::from_usize_lossy(rows - 1) / two;
        out.push(Grid::from_fn(rows, cols, |r, c| {
            let x = cx + (T::from_usize_lossy(c) - cx) * ratio;
            let y = cy + (T::from_usize_lossy(r) - cy) * ratio;
            m.sample_clamped(x, y, 0)
        }));
    }
    Ok(ScaleStack {
        maps: out,
        aovs: aovs.to_vec(),
    })
}

/// 2D convolution with zero padding. Output size equals input size: the
/// window for output pixel `(y, x)` starts at `(y − pad_top, x − pad_left)`,
/// so even kernels effectively pad the bottom/right.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub out_ch: usize,
    pub in_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Self {
        Conv2d {
            out_ch,
            in_ch,
            kh,
            kw,
            pad_top: (kh - 1) / 2,
            pad_left: (kw - 1) / 2,
            weight: vec![T::zero(); out_ch * in_ch * kh * kw],
            bias: vec![T::zero(); out_ch],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kh * self.kw
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + i) * self.kh + ky) * self.kw + kx
    }

    /// Source pixel for output `(y, x)` and tap `(ky, kx)`, if inside.
    #[inline]
    fn source(&self, y: usize, x: usize, ky: usize, kx: usize, rows: usize, cols: usize) -> Option<(usize, usize)> {
        let sy = (y + ky).checked_sub(self.pad_top)?;
        let sx = (x + kx).checked_sub(self.pad_left)?;
        (sy < rows && sx < cols).then_some((sy, sx))
    }

    pub fn forward(&self, input: &Grid<T>) -> Result<Grid<T>> {
        if input.channels() != self.in_ch {
            return Err(Error::shape(format!("{} input channels", self.in_ch), input.shape_str()));
        }
        let (rows, cols) = (input.rows(), input.cols());
        // Repack weights as [ky][kx][in][out] for a contiguous inner loop.
        let mut w = vec![T::zero(); self.weight.len()];
        for o in 0..self.out_ch {
            for i in 0..self.in_ch {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        w[((ky * self.kw + kx) * self.in_ch + i) * self.out_ch + o] =
                            self.weight[self.widx(o, i, ky, kx)];
                    }
                }
            }
        }
        let mut out = Grid::zeros(rows, cols, self.out_ch);
        let src = input.data();
        let dst = out.data_mut();
        for y in 0..rows {
            for x in 0..cols {
                let acc = &mut dst[(y * cols + x) * self.out_ch..(y * cols + x + 1) * self.out_ch];
                acc.copy_from_slice(&self.bias);
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let Some((sy, sx)) = self.source(y, x, ky, kx, rows, cols) else {
                            continue;
                        };
                        let px = &src[(sy * cols + sx) * self.in_ch..(sy * cols + sx + 1) * self.in_ch];
                        let wt = &w[(ky * self.kw + kx) * self.in_ch * self.out_ch..];
                        for (i, &v) in px.iter().enumerate() {
                            if v == T::zero() {
                                continue;
                            }
                            let row = &wt[i * self.out_ch..(i + 1) * self.out_ch];
                            for (a, &wv) in acc.iter_mut().zip(row) {
                                *a += wv * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Returns `(∂L/∂input, ∂L/∂weight, ∂L/∂bias)`.
    pub fn backward(&self, input: &Grid<T>, grad_out: &Grid<T>) -> (Grid<T>, Vec<T>, Vec<T>) {
        let (rows, cols) = (input.rows(), input.cols());
        let mut gi = Grid::zeros(rows, cols, self.in_ch);
        let mut gw = vec![T::zero(); self.weight.len()];
        let mut gb = vec![T::zero(); self.out_ch];
        let src = input.data();
        let go = grad_out.data();
        for y in 0..rows {
            for x in 0..cols {
                let g = &go[(y * cols + x) * self.out_ch..(y * cols + x + 1) * self.out_ch];
                for (b, &v) in gb.iter_mut().zip(g) {
                    *b += v;
                }
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let Some((sy, sx)) = self.source(y, x, ky, kx, rows, cols) else {
                            continue;
                        };
                        let base = (sy * cols + sx) * self.in_ch;
                        for (o, &gv) in g.iter().enumerate() {
                            if gv == T::zero() {
                                continue;
                            }
                            for i in 0..self.in_ch {
                                let wi = self.widx(o, i, ky, kx);
                                gw[wi] += gv * src[base + i];
                                gi.data_mut()[base + i] += gv * self.weight[wi];
                            }
                        }
                    }
                }
            }
        }
        (gi, gw, gb)
    }
}

/// The four integration architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Arch {
    /// Concatenated maps → 3×3 conv (C) → ReLU → 2×2 conv (N) → softmax.
    Shallow,
    /// Concatenated maps → 1×1 (C) → 3×3 (C) → 1×1 (4C) → 1×1 (N) → softmax.
    Deep,
    /// Smallest-view features → shallow stack.
    FeatureShallow,
    /// Smallest-view features → deep stack.
    FeatureDeep,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Shallow, Arch::Deep, Arch::FeatureShallow, Arch::FeatureDeep];

    pub fn number(self) -> u8 {
        match self {
            Arch::Shallow => 1,
            Arch::Deep => 2,
            Arch::FeatureShallow => 3,
            Arch::FeatureDeep => 4,
        }
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Arch::FeatureShallow | Arch::FeatureDeep)
    }

    pub fn is_deep(self) -> bool {
        matches!(self, Arch::Deep | Arch::FeatureDeep)
    }
}

impl TryFrom<u8> for Arch {
    type Error = Error;
    fn try_from(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Arch::Shallow),
            2 => Ok(Arch::Deep),
            3 => Ok(Arch::FeatureShallow),
            4 => Ok(Arch::FeatureDeep),
            _ => Err(Error::invalid(format!("architecture must be 1..4, got {n}"))),
        }
    }
}

impl From<Arch> for u8 {
    fn from(a: Arch) -> u8 {
        a.number()
    }
}

/// Convolution stack of one architecture. ReLU follows every layer except the
/// last, whose output is softmaxed over channels.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T> {
    pub arch: Arch,
    pub layers: Vec<Conv2d<T>>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    /// Input to each layer (post-ReLU of the previous one).
    inputs: Vec<Grid<T>>,
    /// Softmax output.
    pub weights: Grid<T>,
}

/// Gradients in the same layout as [`AttentionParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrads<T> {
    pub layers: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> AttentionParams<T> {
    /// Layer shapes for `arch` with `in_ch` input channels, `hidden` = C and
    /// `n_scales` = N; all parameters zero.
    pub fn zeros(arch: Arch, in_ch: usize, hidden: usize, n_scales: usize) -> Result<Self> {
        if in_ch == 0 || hidden == 0 || n_scales == 0 {
            return Err(Error::invalid("attention channel counts must be positive"));
        }
        let layers = if arch.is_deep() {
            vec![
                Conv2d::zeros(hidden, in_ch, 1, 1),
                Conv2d::zeros(hidden, hidden, 3, 3),
                Conv2d::zeros(4 * hidden, hidden, 1, 1),
                Conv2d::zeros(n_scales, 4 * hidden, 1, 1),
            ]
        } else {
            vec![
                Conv2d::zeros(hidden, in_ch, 3, 3),
                Conv2d::zeros(n_scales, hidden, 2, 2),
            ]
        };
        Ok(AttentionParams { arch, layers })
    }

    /// Uniform `[−1/√fan_in, 1/√fan_in]` initialization from a seeded generator.
    pub fn init(arch: Arch, in_ch: usize, hidden: usize, n_scales: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(arch, in_ch, hidden, n_scales)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut p.layers {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = T::lit(rng.gen_range(-bound..=bound));
            }
        }
        Ok(p)
    }

    pub fn from_layers(arch: Arch, layers: Vec<Conv2d<T>>) -> Result<Self> {
        let expected = if arch.is_deep() { 4 } else { 2 };
        if layers.len() != expected {
            return Err(Error::shape(format!("{expected} layers"), layers.len()));
        }
        for w in layers.windows(2) {
            if w[0].out_ch != w[1].in_ch {
                return Err(Error::shape(
                    format!("layer input {}", w[0].out_ch),
                    w[1].in_ch,
                ));
            }
        }
        for l in &layers {
            if l.weight.len() != l.out_ch * l.in_ch * l.kh * l.kw || l.bias.len() != l.out_ch {
                return Err(Error::invalid("convolution payload size mismatch"));
            }
        }
        Ok(AttentionParams { arch, layers })
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].in_ch
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_ch)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Build the network input: the concatenated maps, or the feature map
    /// resized to the stack resolution.
    pub fn assemble_input(&self, stack: &ScaleStack<T>, features: Option<&Grid<T>>) -> Result<Grid<T>> {
        let input = if self.arch.uses_features() {
            let f = features.ok_or(Error::MissingFeatures(self.arch.number()))?;
            if f.rows() == stack.rows() && f.cols() == stack.cols() {
                f.clone()
            } else {
                f.resize_bilinear(stack.rows(), stack.cols())
            }
        } else {
            stack.concatenated()
        };
        if input.channels() != self.input_channels() {
            return Err(Error::shape(
                format!("{} input channels", self.input_channels()),
                input.shape_str(),
            ));
        }
        if self.output_channels() != stack.len() {
            return Err(Error::shape(
                format!("{} scales", self.output_channels()),
                stack.len(),
            ));
        }
        Ok(input)
    }

    pub fn forward_cached(&self, input: Grid<T>) -> Result<ForwardCache<T>> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input;
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&x)?;
            inputs.push(x);
            if k < last {
                for v in y.data_mut() {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            } else {
                softmax_channels(&mut y);
            }
            x = y;
        }
        Ok(ForwardCache { inputs, weights: x })
    }

    /// Backpropagate `∂L/∂weights` (softmax output) into parameter gradients.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_weights: &Grid<T>) -> AttentionGrads<T> {
        let mut g = softmax_backward(&cache.weights, grad_weights);
        let mut out = vec![(Vec::new(), Vec::new()); self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            let (gi, gw, gb) = self.layers[k].backward(&cache.inputs[k], &g);
            out[k] = (gw, gb);
            if k > 0 {
                // ReLU mask: the cached input of layer k is the ReLU output of k−1.
                g = gi;
                for (gv, &a) in g.data_mut().iter_mut().zip(cache.inputs[k].data()) {
                    if a <= T::zero() {
                        *gv = T::zero();
                    }
                }
            }
        }
        AttentionGrads { layers: out }
    }

    /// Flat mutable views of every parameter tensor (weights then bias, per layer).
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl<T: Real> AttentionGrads<T> {
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

/// Per-pixel softmax across channels, in place.
pub fn softmax_channels<T: Real>(g: &mut Grid<T>) {
    let n = g.channels();
    for px in g.data_mut().chunks_mut(n) {
        let m = px.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in px.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in px.iter_mut() {
            *v /= s;
        }
    }
}

/// `∂L/∂z_n = w_n (g_n − Σ_m w_m g_m)` per pixel.
pub fn softmax_backward<T: Real>(weights: &Grid<T>, grad: &Grid<T>) -> Grid<T> {
    let n = weights.channels();
    let mut out = grad.clone();
    for (o, w) in out.data_mut().chunks_mut(n).zip(weights.data().chunks(n)) {
        let dot: T = o.iter().zip(w).map(|(&a, &b)| a * b).sum();
        for (gv, &wv) in o.iter_mut().zip(w) {
            *gv = wv * (*gv - dot);
        }
    }
    out
}

/// Pixel-wise attention weights (`H × W × N`, summing to one per pixel).
pub fn attention_forward<T: Real>(
    stack: &ScaleStack<T>,
    params: &AttentionParams<T>,
    features: Option<&Grid<T>>,
) -> Result<Grid<T>> {
    let input = params.assemble_input(stack, features)?;
    Ok(params.forward_cached(input)?.weights)
}

/// `out(x) = Σ_n weight_n(x) · map_n(x)`.
pub fn integrate<T: Real>(stack: &ScaleStack<T>, weights: &Grid<T>) -> Result<Grid<T>> {
    let n = stack.len();
    if weights.channels() != n || weights.rows() != stack.rows() || weights.cols() != stack.cols() {
        return Err(Error::shape(
            format!("{}x{}x{}", stack.rows(), stack.cols(), n),
            weights.shape_str(),
        ));
    }
    let mut out = Grid::zeros(stack.rows(), stack.cols(), 1);
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let w = &weights.data()[i * n..(i + 1) * n];
        *o = stack.maps.iter().zip(w).map(|(m, &wv)| wv * m.data()[i]).sum();
    }
    Ok(out)
}

/// `∂L/∂weights` from `∂L/∂out` for [`integrate`].
pub fn integrate_backward<T: Real>(stack: &ScaleStack<T>, grad_out: &Grid<T>) -> Grid<T> {
    let n = stack.len();
    let mut g = Grid::zeros(stack.rows(), stack.cols(), n);
    for (i, px) in g.data_mut().chunks_mut(n).enumerate() {
        let go = grad_out.data()[i];
        for (k, v) in px.iter_mut().enumerate() {
            *v = go * stack.maps[k].data()[i];
        }
    }
    g
}
