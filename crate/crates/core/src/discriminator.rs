//! Convolutional discriminators.
//!
//! The SNGAN-style network is a stack of residual blocks (ReLU → conv3×3 →
//! ReLU → conv3×3, optional 2× average-pool down-sampling) followed by
//! ReLU, global sum pooling and a linear score head. Every conv and the head
//! are spectrally normalized when `use_sn` is set. A small strided-conv
//! DCGAN-style network is provided as a weak baseline.

use crate::error::{Error, Result};
use crate::nn::{join, normal, Params};
use crate::tensor::{Activation, Graph, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiscriminatorVariant {
    Sngan,
    Dcgan,
}

impl fmt::Display for DiscriminatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscriminatorVariant::Sngan => "sngan",
            DiscriminatorVariant::Dcgan => "dcgan",
        })
    }
}

impl FromStr for DiscriminatorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sngan" => Ok(Self::Sngan),
            "dcgan" => Ok(Self::Dcgan),
            _ => Err(Error::config(format!("unknown discriminator variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSpec {
    pub in_channels: usize,
    /// Expected input side length.
    pub resolution: usize,
    pub base_width: usize,
    pub n_blocks: usize,
    /// Per-block down-sampling (SNGAN only; DCGAN layers always stride 2).
    pub downsample: Vec<bool>,
    pub use_sn: bool,
    pub variant: DiscriminatorVariant,
}

impl DiscriminatorSpec {
    /// Named benchmark presets: `sngan`, `sngan_no_sn`, `dcgan`.
    ///
    /// Resolutions of 32 and above get the full-size networks (about 9.4M
    /// and 0.66M parameters); smaller resolutions get toy widths.
    pub fn preset(name: &str, resolution: usize) -> Result<Self> {
        let full = resolution >= 32;
        match name {
            "sngan" | "sngan_no_sn" => {
                let (base_width, downsample) =
                    if full { (384, vec![true, true, false, false]) } else { (16, vec![true, true, false]) };
                Ok(Self {
                    in_channels: 3,
                    resolution,
                    base_width,
                    n_blocks: downsample.len(),
                    downsample,
                    use_sn: name == "sngan",
                    variant: DiscriminatorVariant::Sngan,
                })
            }
            "dcgan" => {
                let n_blocks = (resolution.max(8).ilog2() as usize).saturating_sub(2).max(1);
                Ok(Self {
                    in_channels: 3,
                    resolution,
                    base_width: if full { 64 } else { 8 },
                    n_blocks,
                    downsample: vec![true; n_blocks],
                    use_sn: false,
                    variant: DiscriminatorVariant::Dcgan,
                })
            }
            other => Err(Error::config(format!("unknown discriminator preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.resolution == 0 || self.n_blocks == 0 {
            return Err(Error::config("discriminator extents must be positive"));
        }
        if self.downsample.len() != self.n_blocks {
            return Err(Error::config(format!(
                "downsample lists {} flags for {} blocks",
                self.downsample.len(),
                self.n_blocks
            )));
        }
        let mut r = self.resolution;
        for (i, &down) in self.downsample.iter().enumerate() {
            if down || self.variant == DiscriminatorVariant::Dcgan {
                if !r.is_multiple_of(2) || r < 2 {
                    return Err(Error::config(format!("block {i} halves odd resolution {r}")));
                }
                r /= 2;
            }
        }
        Ok(())
    }

    /// Per-layer output widths.
    fn widths(&self) -> Vec<usize> {
        match self.variant {
            DiscriminatorVariant::Sngan => vec![self.base_width; self.n_blocks],
            DiscriminatorVariant::Dcgan => (0..self.n_blocks).map(|i| self.base_width << i).collect(),
        }
    }

    pub fn final_resolution(&self) -> usize {
        let downs = match self.variant {
            DiscriminatorVariant::Sngan => self.downsample.iter().filter(|&&d| d).count(),
            DiscriminatorVariant::Dcgan => self.n_blocks,
        };
        self.resolution >> downs
    }

    /// Exact parameter count (SN vectors excluded).
    pub fn param_count(&self) -> usize {
        let conv = |o: usize, c: usize, k: usize| o * c * k * k + o;
        let widths = self.widths();
        match self.variant {
            DiscriminatorVariant::Sngan => {
                let mut c = self.in_channels;
                let mut n = 0;
                for &w in &widths {
                    n += conv(w, c, 3) + conv(w, w, 3);
                    if c != w {
                        n += conv(w, c, 1);
                    }
                    c = w;
                }
                n + c + 1
            }
            DiscriminatorVariant::Dcgan => {
                let mut c = self.in_channels;
                let mut n = 0;
                for &w in &widths {
                    n += conv(w, c, 4);
                    c = w;
                }
                n + conv(1, c, self.final_resolution())
            }
        }
    }
}

/// Persisted power-iteration vector of one spectrally normalized weight.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNormState<T> {
    /// Unit vector over the weight's output rows.
    pub u: Tensor<T>,
    pub n_power_iters: usize,
}

#[derive(Debug, Clone)]
pub struct SpectralNormOutput<T> {
    pub weight: Tensor<T>,
    pub state: SpectralNormState<T>,
    pub sigma: T,
    /// Set when the weight is (numerically) zero; the weight is returned unchanged.
    pub degenerate: bool,
}

fn normalize<T: Real>(v: &mut [T]) -> T {
    let n = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
    n
}

/// `Wᵀu` for a row-major `rows × cols` matrix.
fn mat_t_vec<T: Real>(w: &[T], rows: usize, cols: usize, u: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for i in 0..rows {
        let ui = u[i];
        for (o, &x) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o = *o + x * ui;
        }
    }
    out
}

fn mat_vec<T: Real>(w: &[T], rows: usize, cols: usize, v: &[T]) -> Vec<T> {
    (0..rows).map(|i| w[i * cols..(i + 1) * cols].iter().zip(v).map(|(&a, &b)| a * b).sum()).collect()
}

impl<T: Real> SpectralNormState<T> {
    pub fn new(rng: &mut ChaCha8Rng, rows: usize) -> Self {
        let mut u = normal::<T, _>(rng, &[rows], 1.0);
        if normalize(u.data_mut()) == T::zero() {
            u.data_mut()[0] = T::one();
        }
        Self { u, n_power_iters: 1 }
    }

    /// Runs `iters` rounds of `v ← Wᵀu/‖·‖, u ← Wv/‖·‖` on a `rows × cols` weight.
    pub fn power_iterate(&mut self, w: &[T], cols: usize, iters: usize) {
        let rows = self.u.len();
        for _ in 0..iters {
            let mut v = mat_t_vec(w, rows, cols, self.u.data());
            if normalize(&mut v) == T::zero() {
                return;
            }
            let mut u = mat_vec(w, rows, cols, &v);
            if normalize(&mut u) == T::zero() {
                return;
            }
            self.u.data_mut().copy_from_slice(&u);
        }
    }

    /// Singular-value estimate `σ̂ = uᵀWv` with `v = Wᵀu/‖Wᵀu‖`, and that `v`.
    pub fn estimate(&self, w: &[T], cols: usize) -> (T, Vec<T>) {
        let rows = self.u.len();
        let mut v = mat_t_vec(w, rows, cols, self.u.data());
        let sigma = normalize(&mut v);
        (sigma, v)
    }
}

/// Power-iterates `state.n_power_iters` times and divides the `rows × cols`
/// view of `weight` by the resulting singular-value estimate.
pub fn spectral_normalize<T: Real>(weight: &Tensor<T>, state: &SpectralNormState<T>) -> Result<SpectralNormOutput<T>> {
    let rows = state.u.len();
    if rows == 0 || !weight.len().is_multiple_of(rows) {
        return Err(Error::dim(format!("weight {:?} has no {rows}-row view", weight.shape())));
    }
    let cols = weight.len() / rows;
    let mut state = state.clone();
    state.power_iterate(weight.data(), cols, state.n_power_iters);
    let (sigma, _) = state.estimate(weight.data(), cols);
    if sigma <= T::epsilon() {
        return Ok(SpectralNormOutput { weight: weight.clone(), state, sigma: T::zero(), degenerate: true });
    }
    let data = weight.data().iter().map(|&x| x / sigma).collect();
    let normalized = Tensor::new(weight.shape(), data)?;
    Ok(SpectralNormOutput { weight: normalized, state, sigma, degenerate: false })
}

/// Convolution with optional spectral normalization of its kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    /// `O × C × k × k`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub sn: Option<SpectralNormState<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Real> Conv<T> {
    #[allow(clippy::too_many_arguments)]
    fn init(
        rng: &mut ChaCha8Rng,
        out_c: usize,
        in_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        use_sn: bool,
    ) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let weight = normal(rng, &[out_c, in_c, k, k], (gain / fan_in).sqrt()).with_grad();
        let sn = use_sn.then(|| SpectralNormState::new(rng, out_c));
        Self { weight, bias: Tensor::zeros(&[out_c]).with_grad(), sn, stride, padding }
    }

    fn cols(&self) -> usize {
        self.weight.len() / self.weight.shape()[0]
    }

    /// The kernel actually used in the forward pass.
    pub fn effective_weight(&self) -> Result<Tensor<T>> {
        match &self.sn {
            None => Ok(self.weight.clone()),
            Some(sn) => {
                let (sigma, _) = sn.estimate(self.weight.data(), self.cols());
                if sigma <= T::epsilon() {
                    return Ok(self.weight.clone());
                }
                Tensor::new(self.weight.shape(), self.weight.data().iter().map(|&x| x / sigma).collect())
            }
        }
    }

    fn power_iterate(&mut self, iters: usize) {
        let cols = self.cols();
        if let Some(sn) = &mut self.sn {
            sn.power_iterate(self.weight.data(), cols, iters);
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        let w = g.bind(&self.weight, trainable);
        let w = sn_weight(g, w, &self.weight, self.sn.as_ref())?;
        let b = g.bind(&self.bias, trainable);
        g.conv2d(x, w, Some(b), self.stride, self.padding)
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

fn sn_weight<T: Real>(g: &mut Graph<T>, w: Var, weight: &Tensor<T>, sn: Option<&SpectralNormState<T>>) -> Result<Var> {
    let Some(sn) = sn else { return Ok(w) };
    let cols = weight.len() / sn.u.len();
    let (sigma, v) = sn.estimate(weight.data(), cols);
    if sigma <= T::epsilon() {
        return Ok(w);
    }
    g.spectral_divide(w, sn.u.data(), &v)
}

/// Linear score head with weight stored as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub sn: Option<SpectralNormState<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T> {
    pub conv1: Conv<T>,
    pub conv2: Conv<T>,
    /// 1×1 projection, present when the block changes the channel count.
    pub shortcut: Option<Conv<T>>,
    pub downsample: bool,
}

impl<T: Real> ResBlock<T> {
    pub fn init(rng: &mut ChaCha8Rng, in_c: usize, out_c: usize, downsample: bool, use_sn: bool) -> Self {
        Self {
            conv1: Conv::init(rng, out_c, in_c, 3, 1, 1, 2.0, use_sn),
            conv2: Conv::init(rng, out_c, out_c, 3, 1, 1, 2.0, use_sn),
            shortcut: (in_c != out_c).then(|| Conv::init(rng, out_c, in_c, 1, 1, 0, 1.0, use_sn)),
            downsample,
        }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        let s = g.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::dim(format!("resblock expects N×C×H×W, got {s:?}")));
        }
        if self.downsample && (!s[2].is_multiple_of(2) || !s[3].is_multiple_of(2)) {
            return Err(Error::dim(format!("resblock cannot down-sample odd extents {s:?}")));
        }
        let h = g.relu(x)?;
        let h = self.conv1.forward(g, h, trainable)?;
        let h = g.relu(h)?;
        let mut h = self.conv2.forward(g, h, trainable)?;
        let mut sc = match &self.shortcut {
            Some(conv) => conv.forward(g, x, trainable)?,
            None => x,
        };
        if self.downsample {
            h = g.avg_pool2d(h, 2)?;
            sc = g.avg_pool2d(sc, 2)?;
        }
        g.add(h, sc)
    }

    fn convs(&self) -> impl Iterator<Item = &Conv<T>> {
        [Some(&self.conv1), Some(&self.conv2), self.shortcut.as_ref()].into_iter().flatten()
    }

    fn convs_mut(&mut self) -> impl Iterator<Item = &mut Conv<T>> {
        [Some(&mut self.conv1), Some(&mut self.conv2), self.shortcut.as_mut()].into_iter().flatten()
    }
}

impl<T: Real> Params<T> for ResBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(sc) = &self.shortcut {
            sc.visit(&join(prefix, "shortcut"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_mut(&join(prefix, "shortcut"), f);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body<T> {
    Residual {
        blocks: Vec<ResBlock<T>>,
        head: Head<T>,
    },
    /// Stride-2 4×4 convs with leaky ReLU, then a valid conv down to one score.
    Strided {
        layers: Vec<Conv<T>>,
        out: Conv<T>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams<T> {
    pub spec: DiscriminatorSpec,
    pub body: Body<T>,
}

pub fn init_discriminator<T: Real>(spec: &DiscriminatorSpec, seed: u64) -> Result<DiscriminatorParams<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let widths = spec.widths();
    let body = match spec.variant {
        DiscriminatorVariant::Sngan => {
            let mut c = spec.in_channels;
            let mut blocks = Vec::new();
            for (&w, &down) in widths.iter().zip(&spec.downsample) {
                blocks.push(ResBlock::init(&mut rng, c, w, down, spec.use_sn));
                c = w;
            }
            let head = Head {
                weight: normal(&mut rng, &[1, c], (1.0 / c as f64).sqrt()).with_grad(),
                bias: Tensor::zeros(&[1]).with_grad(),
                sn: spec.use_sn.then(|| SpectralNormState::new(&mut rng, 1)),
            };
            Body::Residual { blocks, head }
        }
        DiscriminatorVariant::Dcgan => {
            let mut c = spec.in_channels;
            let mut layers = Vec::new();
            for &w in &widths {
                layers.push(Conv::init(&mut rng, w, c, 4, 2, 1, 2.0, spec.use_sn));
                c = w;
            }
            let k = spec.final_resolution();
            let out = Conv::init(&mut rng, 1, c, k, 1, 0, 1.0, spec.use_sn);
            Body::Strided { layers, out }
        }
    };
    Ok(DiscriminatorParams { spec: spec.clone(), body })
}

impl<T: Real> DiscriminatorParams<T> {
    /// Records the forward pass: `N×C×R×R` images to `N` raw scores.
    pub fn forward(&self, g: &mut Graph<T>, images: Var, trainable: bool) -> Result<Var> {
        let s = g.shape(images).to_vec();
        let r = self.spec.resolution;
        if s.len() != 4 || s[1] != self.spec.in_channels || s[2] != r || s[3] != r {
            return Err(Error::dim(format!(
                "discriminator expects N×{}×{r}×{r} images, got {s:?}",
                self.spec.in_channels
            )));
        }
        let n = s[0];
        match &self.body {
            Body::Residual { blocks, head } => {
                let mut x = images;
                for b in blocks {
                    x = b.forward(g, x, trainable)?;
                }
                let x = g.relu(x)?;
                let xs = g.shape(x).to_vec();
                let x = g.reshape(x, &[n, xs[1], xs[2] * xs[3]])?;
                let pooled = g.sum_last(x)?;
                let w = g.bind(&head.weight, trainable);
                let w = sn_weight(g, w, &head.weight, head.sn.as_ref())?;
                let wt = g.transpose(w)?;
                let b = g.bind(&head.bias, trainable);
                let y = g.matmul(pooled, wt)?;
                let y = g.add_broadcast(y, b)?;
                g.reshape(y, &[n])
            }
            Body::Strided { layers, out } => {
                let mut x = images;
                for l in layers {
                    x = l.forward(g, x, trainable)?;
                    x = g.activation(x, Activation::LeakyRelu)?;
                }
                let y = out.forward(g, x, trainable)?;
                g.reshape(y, &[n])
            }
        }
    }

    /// Scores images in evaluation mode (no power-iteration updates).
    pub fn discriminate(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(images);
        let y = self.forward(&mut g, x, false)?;
        Ok(g.to_tensor(y))
    }

    /// Advances every spectral-norm state by `iters` power iterations.
    pub fn power_iterate(&mut self, iters: usize) {
        match &mut self.body {
            Body::Residual { blocks, head } => {
                for b in blocks {
                    b.convs_mut().for_each(|c| c.power_iterate(iters));
                }
                if let Some(sn) = &mut head.sn {
                    sn.power_iterate(head.weight.data(), head.weight.len(), iters);
                }
            }
            Body::Strided { layers, out } => {
                layers.iter_mut().for_each(|c| c.power_iterate(iters));
                out.power_iterate(iters);
            }
        }
    }

    /// Every conv layer, in visiting order.
    pub fn convs(&self) -> Vec<&Conv<T>> {
        match &self.body {
            Body::Residual { blocks, .. } => blocks.iter().flat_map(|b| b.convs()).collect(),
            Body::Strided { layers, out } => layers.iter().chain(std::iter::once(out)).collect(),
        }
    }

    /// Visits every spectral-norm state with a stable name (none when SN is off).
    pub fn visit_sn(&self, f: &mut dyn FnMut(String, &SpectralNormState<T>)) {
        let mut conv = |name: String, c: &Conv<T>| {
            if let Some(sn) = &c.sn {
                f(format!("{name}.sn_u"), sn);
            }
        };
        match &self.body {
            Body::Residual { blocks, head } => {
                for (i, b) in blocks.iter().enumerate() {
                    conv(format!("block{i}.conv1"), &b.conv1);
                    conv(format!("block{i}.conv2"), &b.conv2);
                    if let Some(sc) = &b.shortcut {
                        conv(format!("block{i}.shortcut"), sc);
                    }
                }
                if let Some(sn) = &head.sn {
                    f("head.sn_u".into(), sn);
                }
            }
            Body::Strided { layers, out } => {
                for (i, l) in layers.iter().enumerate() {
                    conv(format!("layer{i}"), l);
                }
                conv("out".into(), out);
            }
        }
    }

    pub fn visit_sn_mut(&mut self, f: &mut dyn FnMut(String, &mut SpectralNormState<T>)) {
        let mut conv = |name: String, c: &mut Conv<T>| {
            if let Some(sn) = &mut c.sn {
                f(format!("{name}.sn_u"), sn);
            }
        };
        match &mut self.body {
            Body::Residual { blocks, head } => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    conv(format!("block{i}.conv1"), &mut b.conv1);
                    conv(format!("block{i}.conv2"), &mut b.conv2);
                    if let Some(sc) = &mut b.shortcut {
                        conv(format!("block{i}.shortcut"), sc);
                    }
                }
                if let Some(sn) = &mut head.sn {
                    f("head.sn_u".into(), sn);
                }
            }
            Body::Strided { layers, out } => {
                for (i, l) in layers.iter_mut().enumerate() {
                    conv(format!("layer{i}"), l);
                }
                conv("out".into(), out);
            }
        }
    }

    /// Effective (post-normalization) weight of every layer as `(name, rows×cols view)`.
    pub fn effective_weights(&self) -> Result<Vec<(String, Tensor<T>)>> {
        let mut out = Vec::new();
        for (i, c) in self.convs().into_iter().enumerate() {
            out.push((format!("conv{i}"), c.effective_weight()?));
        }
        if let Body::Residual { head, .. } = &self.body {
            let w = match &head.sn {
                Some(sn) => {
                    let (sigma, _) = sn.estimate(head.weight.data(), head.weight.len());
                    Tensor::new(head.weight.shape(), head.weight.data().iter().map(|&x| x / sigma).collect())?
                }
                None => head.weight.clone(),
            };
            out.push(("head".into(), w));
        }
        Ok(out)
    }
}

impl<T: Real> Params<T> for DiscriminatorParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        match &self.body {
            Body::Residual { blocks, head } => {
                for (i, b) in blocks.iter().enumerate() {
                    b.visit(&join(prefix, &format!("block{i}")), f);
                }
                f(join(prefix, "head.weight"), &head.weight);
                f(join(prefix, "head.bias"), &head.bias);
            }
            Body::Strided { layers, out } => {
                for (i, l) in layers.iter().enumerate() {
                    l.visit(&join(prefix, &format!("layer{i}")), f);
                }
                out.visit(&join(prefix, "out"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        match &mut self.body {
            Body::Residual { blocks, head } => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    b.visit_mut(&join(prefix, &format!("block{i}")), f);
                }
                f(join(prefix, "head.weight"), &mut head.weight);
                f(join(prefix, "head.bias"), &mut head.bias);
            }
            Body::Strided { layers, out } => {
                for (i, l) in layers.iter_mut().enumerate() {
                    l.visit_mut(&join(prefix, &format!("layer{i}")), f);
                }
                out.visit_mut(&join(prefix, "out"), f);
            }
        }
    }
}
