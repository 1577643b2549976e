//! Transformer generator.
//!
//! A latent vector is projected to a `base_grid × base_grid` token grid.
//! Each stage runs a stack of pre-norm encoder blocks; between stages the
//! token grid is up-sampled 2× by pixel shuffle (token count ×4, width ÷4).
//! The final tokens are mapped to RGB by a linear layer followed by `tanh`.

use crate::error::{Error, Result};
use crate::nn::{join, LayerNorm, Linear, Params};
use crate::tensor::{lit, Graph, Real, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    pub base_grid: usize,
    /// Token width of the first stage.
    pub embed_dim: usize,
    /// Encoder blocks per stage; its length is the number of stages.
    pub depths: Vec<usize>,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub out_channels: usize,
}

impl GeneratorSpec {
    pub const PRESETS: [&'static str; 5] = ["tiny", "s", "m", "l", "xl"];

    /// Test-scale preset: 4×4 grid up-sampled once to 8×8.
    pub fn tiny() -> Self {
        Self {
            latent_dim: 16,
            base_grid: 4,
            embed_dim: 16,
            depths: vec![1, 1],
            heads: 2,
            mlp_ratio: 4.0,
            out_channels: 3,
        }
    }

    fn full(embed_dim: usize, depths: [usize; 3]) -> Self {
        Self {
            latent_dim: 256,
            base_grid: 8,
            embed_dim,
            depths: depths.to_vec(),
            heads: 4,
            mlp_ratio: 4.0,
            out_channels: 3,
        }
    }

    /// Looks up a named preset (`tiny`, `s`, `m`, `l`, `xl`, case-insensitive).
    ///
    /// The 32×32 presets are sized to roughly 18.6M, 33.1M, 74.3M and 133.6M parameters.
    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "tiny" => Ok(Self::tiny()),
            "s" => Ok(Self::full(384, [7, 4, 2])),
            "m" => Ok(Self::full(576, [6, 4, 2])),
            "l" => Ok(Self::full(896, [6, 4, 2])),
            "xl" => Ok(Self::full(1024, [9, 4, 2])),
            other => Err(Error::config(format!("unknown generator preset {other:?}"))),
        }
    }

    pub fn stages(&self) -> usize {
        self.depths.len()
    }

    /// Token width at `stage`.
    pub fn stage_dim(&self, stage: usize) -> usize {
        self.embed_dim >> (2 * stage)
    }

    pub fn stage_grid(&self, stage: usize) -> usize {
        self.base_grid << stage
    }

    /// Output image side length.
    pub fn resolution(&self) -> usize {
        self.stage_grid(self.stages().saturating_sub(1))
    }

    pub fn mlp_hidden(&self, d: usize) -> usize {
        (self.mlp_ratio * d as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.latent_dim == 0 || self.base_grid == 0 || self.out_channels == 0 || self.heads == 0 {
            return bad("latent_dim, base_grid, heads and out_channels must be positive".into());
        }
        if self.depths.is_empty() {
            return bad("depths must list at least one stage".into());
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return bad(format!("mlp_ratio must be positive, got {}", self.mlp_ratio));
        }
        let div = 1usize << (2 * (self.stages() - 1));
        if !self.embed_dim.is_multiple_of(div) || self.embed_dim < div {
            return bad(format!("embed_dim {} must be divisible by 4^(stages-1) = {div}", self.embed_dim));
        }
        for s in 0..self.stages() {
            let d = self.stage_dim(s);
            if !d.is_multiple_of(self.heads) {
                return bad(format!("stage {s} width {d} not divisible by {} heads", self.heads));
            }
            if self.mlp_hidden(d) == 0 {
                return bad(format!("stage {s} MLP hidden width rounds to zero"));
            }
        }
        Ok(())
    }

    /// Exact number of scalar parameters of a generator built from this spec.
    pub fn param_count(&self) -> usize {
        let g0 = self.base_grid * self.base_grid;
        let mut n = Linear::<f32>::count(self.latent_dim, g0 * self.embed_dim);
        for s in 0..self.stages() {
            let d = self.stage_dim(s);
            let tokens = self.stage_grid(s).pow(2);
            n += tokens * d;
            let h = self.mlp_hidden(d);
            let block =
                4 * Linear::<f32>::count(d, d) + Linear::<f32>::count(d, h) + Linear::<f32>::count(h, d) + 4 * d;
            n += self.depths[s] * block;
        }
        n + Linear::<f32>::count(self.stage_dim(self.stages() - 1), self.out_channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBlock<T> {
    pub norm1: LayerNorm<T>,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub proj: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub heads: usize,
}

impl<T: Real> EncoderBlock<T> {
    pub fn init(rng: &mut ChaCha8Rng, d: usize, hidden: usize, heads: usize) -> Self {
        Self {
            norm1: LayerNorm::new(d),
            query: Linear::init(rng, d, d, INIT_STD),
            key: Linear::init(rng, d, d, INIT_STD),
            value: Linear::init(rng, d, d, INIT_STD),
            proj: Linear::init(rng, d, d, INIT_STD),
            norm2: LayerNorm::new(d),
            fc1: Linear::init(rng, d, hidden, INIT_STD),
            fc2: Linear::init(rng, hidden, d, INIT_STD),
            heads,
        }
    }

    /// Multi-head scaled dot-product self-attention over `N×T×d` tokens.
    pub fn attention(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let (n, t, d) = (s[0], s[1], s[2]);
        let h = self.heads;
        if h == 0 || d % h != 0 {
            return Err(Error::config(format!("width {d} not divisible by {h} heads")));
        }
        let dh = d / h;
        let split = |g: &mut Graph<T>, v: Var| -> Result<Var> {
            let v = g.reshape(v, &[n, t, h, dh])?;
            let v = g.permute(v, &[0, 2, 1, 3])?;
            g.reshape(v, &[n * h, t, dh])
        };
        let q = self.query.forward(g, x, trainable)?;
        let q = split(g, q)?;
        let k = self.key.forward(g, x, trainable)?;
        let k = split(g, k)?;
        let v = self.value.forward(g, x, trainable)?;
        let v = split(g, v)?;
        let kt = g.transpose(k)?;
        let scores = g.batch_matmul(q, kt)?;
        let scores = g.scale(scores, lit(1.0 / (dh as f64).sqrt()))?;
        let attn = g.softmax(scores)?;
        let ctx = g.batch_matmul(attn, v)?;
        let ctx = g.reshape(ctx, &[n, h, t, dh])?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[n, t, d])?;
        self.proj.forward(g, ctx, trainable)
    }

    /// `x + MHSA(LN(x))`, then `+ MLP(LN(·))`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        if g.shape(x).len() != 3 {
            return Err(Error::dim(format!("encoder block expects N×T×d, got {:?}", g.shape(x))));
        }
        let h = self.norm1.forward(g, x, trainable)?;
        let h = self.attention(g, h, trainable)?;
        let x = g.add(x, h)?;
        let h = self.norm2.forward(g, x, trainable)?;
        let h = self.fc1.forward(g, h, trainable)?;
        let h = g.gelu(h)?;
        let h = self.fc2.forward(g, h, trainable)?;
        g.add(x, h)
    }
}

impl<T: Real> Params<T> for EncoderBlock<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        self.proj.visit(&join(prefix, "proj"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        self.proj.visit_mut(&join(prefix, "proj"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Reshapes `N×(H·W)×d` tokens to an image, pixel-shuffles by 2 and flattens
/// back to `N×(4·H·W)×(d/4)` tokens.
pub fn upsample_stage<T: Real>(g: &mut Graph<T>, tokens: Var, grid: (usize, usize)) -> Result<Var> {
    let s = g.shape(tokens).to_vec();
    let (h, w) = grid;
    if s.len() != 3 || s[1] != h * w {
        return Err(Error::config(format!("upsample: tokens {s:?} do not form a {h}×{w} grid")));
    }
    let (n, d) = (s[0], s[2]);
    if d % 4 != 0 {
        return Err(Error::config(format!("upsample: width {d} not divisible by 4")));
    }
    let x = g.reshape(tokens, &[n, h, w, d])?;
    let x = g.permute(x, &[0, 3, 1, 2])?;
    let x = g.pixel_shuffle(x, 2)?;
    let x = g.permute(x, &[0, 2, 3, 1])?;
    g.reshape(x, &[n, 4 * h * w, d / 4])
}

/// Inverse of [`upsample_stage`]; `grid` is the grid of the *input* tokens.
pub fn downsample_stage<T: Real>(g: &mut Graph<T>, tokens: Var, grid: (usize, usize)) -> Result<Var> {
    let s = g.shape(tokens).to_vec();
    let (h, w) = grid;
    if s.len() != 3 || s[1] != h * w || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::config(format!("downsample: tokens {s:?} do not form an even {h}×{w} grid")));
    }
    let (n, d) = (s[0], s[2]);
    let x = g.reshape(tokens, &[n, h, w, d])?;
    let x = g.permute(x, &[0, 3, 1, 2])?;
    let x = g.pixel_unshuffle(x, 2)?;
    let x = g.permute(x, &[0, 2, 3, 1])?;
    g.reshape(x, &[n, h * w / 4, d * 4])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T> {
    pub spec: GeneratorSpec,
    pub input_proj: Linear<T>,
    pub pos_embed: Vec<Tensor<T>>,
    pub stages: Vec<Vec<EncoderBlock<T>>>,
    pub to_rgb: Linear<T>,
}

/// Builds generator parameters deterministically from `seed`.
pub fn init_generator<T: Real>(spec: &GeneratorSpec, seed: u64) -> Result<GeneratorParams<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g0 = spec.base_grid * spec.base_grid;
    let input_proj = Linear::init(&mut rng, spec.latent_dim, g0 * spec.embed_dim, INIT_STD);
    let mut pos_embed = Vec::new();
    let mut stages = Vec::new();
    for s in 0..spec.stages() {
        let d = spec.stage_dim(s);
        pos_embed.push(Tensor::zeros(&[spec.stage_grid(s).pow(2), d]).with_grad());
        let blocks =
            (0..spec.depths[s]).map(|_| EncoderBlock::init(&mut rng, d, spec.mlp_hidden(d), spec.heads)).collect();
        stages.push(blocks);
    }
    let last = spec.stage_dim(spec.stages() - 1);
    let to_rgb = Linear::init(&mut rng, last, spec.out_channels, INIT_STD);
    Ok(GeneratorParams { spec: spec.clone(), input_proj, pos_embed, stages, to_rgb })
}

impl<T: Real> GeneratorParams<T> {
    /// Records the forward pass; `latents` is `N × latent_dim`, output `N×C×R×R`.
    pub fn forward(&self, g: &mut Graph<T>, latents: Var, trainable: bool) -> Result<Var> {
        let spec = &self.spec;
        let ls = g.shape(latents).to_vec();
        if ls.len() != 2 || ls[1] != spec.latent_dim {
            return Err(Error::dim(format!("latents {ls:?} do not match latent_dim {}", spec.latent_dim)));
        }
        let n = ls[0];
        let x = self.input_proj.forward(g, latents, trainable)?;
        let mut x = g.reshape(x, &[n, spec.base_grid * spec.base_grid, spec.embed_dim])?;
        for (s, blocks) in self.stages.iter().enumerate() {
            if s > 0 {
                let grid = spec.stage_grid(s - 1);
                x = upsample_stage(g, x, (grid, grid))?;
            }
            let pe = g.bind(&self.pos_embed[s], trainable);
            x = g.add_broadcast(x, pe)?;
            for block in blocks {
                x = block.forward(g, x, trainable)?;
            }
        }
        let r = spec.resolution();
        let x = self.to_rgb.forward(g, x, trainable)?;
        let x = g.reshape(x, &[n, r, r, spec.out_channels])?;
        let x = g.permute(x, &[0, 3, 1, 2])?;
        g.tanh(x)
    }

    /// Generates images outside any training graph.
    pub fn generate(&self, latents: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let z = g.constant(latents);
        let out = self.forward(&mut g, z, false)?;
        Ok(g.to_tensor(out))
    }
}

impl<T: Real> Params<T> for GeneratorParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.input_proj.visit(&join(prefix, "input_proj"), f);
        for (s, blocks) in self.stages.iter().enumerate() {
            f(join(prefix, &format!("stage{s}.pos_embed")), &self.pos_embed[s]);
            for (b, block) in blocks.iter().enumerate() {
                block.visit(&join(prefix, &format!("stage{s}.block{b}")), f);
            }
        }
        self.to_rgb.visit(&join(prefix, "to_rgb"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.input_proj.visit_mut(&join(prefix, "input_proj"), f);
        for (s, blocks) in self.stages.iter_mut().enumerate() {
            f(join(prefix, &format!("stage{s}.pos_embed")), &mut self.pos_embed[s]);
            for (b, block) in blocks.iter_mut().enumerate() {
                block.visit_mut(&join(prefix, &format!("stage{s}.block{b}")), f);
            }
        }
        self.to_rgb.visit_mut(&join(prefix, "to_rgb"), f);
    }
}

/// Standard-normal latent batch.
pub fn sample_latents<T: Real, R: rand::Rng + ?Sized>(rng: &mut R, n: usize, latent_dim: usize) -> Tensor<T> {
    Tensor::from_fn(&[n, latent_dim], |_| lit(StandardNormal.sample(rng)))
}
