use super::adam::{adam_step, AdamHyper, AdamState};
use super::loss::{hinge_d_loss, hinge_g_loss};
use crate::config::RunConfig;
use crate::dataio::{save_checkpoint, save_image_grid, ImageBatch};
use crate::discriminator::{init_discriminator, DiscriminatorParams, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::generator::{init_generator, sample_latents, GeneratorParams, GeneratorSpec};
use crate::metrics::{fid, FeatureExtractor};
use crate::nn::Params;
use crate::tensor::{Graph, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub d_steps_per_g_step: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_g: 2e-4,
            lr_d: 2e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.99,
            adam_eps: 1e-8,
            batch_size: 32,
            total_steps: 1000,
            d_steps_per_g_step: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_g > 0.0 && self.lr_d > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.d_steps_per_g_step == 0 {
            return Err(Error::config("d_steps_per_g_step must be >= 1"));
        }
        Ok(())
    }

    fn hyper(&self, lr: f64) -> AdamHyper {
        AdamHyper { lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}

/// Everything that changes during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T: Real> {
    pub generator: GeneratorParams<T>,
    pub discriminator: DiscriminatorParams<T>,
    pub opt_g: AdamState<T>,
    pub opt_d: AdamState<T>,
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub collapsed: bool,
}

const DISC_SEED_SALT: u64 = 0xD15C_0000_0000_0001;
const DATA_RNG_SALT: u64 = 0x7EA1_0000_0000_0002;
const EVAL_SEED_SALT: u64 = 0xE7A1_0000_0000_0003;

impl<T: Real> TrainState<T> {
    pub fn new(gspec: &GeneratorSpec, dspec: &DiscriminatorSpec, seed: u64) -> Result<Self> {
        if gspec.resolution() != dspec.resolution || gspec.out_channels != dspec.in_channels {
            return Err(Error::config(format!(
                "generator emits {}×{r}×{r} but discriminator expects {}×{d}×{d}",
                gspec.out_channels,
                dspec.in_channels,
                r = gspec.resolution(),
                d = dspec.resolution
            )));
        }
        let generator = init_generator(gspec, seed)?;
        let discriminator = init_discriminator(dspec, seed ^ DISC_SEED_SALT)?;
        Ok(Self {
            opt_g: AdamState::new(&generator),
            opt_d: AdamState::new(&discriminator),
            generator,
            discriminator,
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ DATA_RNG_SALT),
            collapsed: false,
        })
    }
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub step: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub grad_norm_d: f64,
    pub grad_norm_g: f64,
    pub wall_ms: Option<f64>,
    pub fid_proxy: Option<f64>,
    pub collapsed: bool,
}

impl RunRecord {
    /// The record with wall-clock timing removed.
    pub fn without_timing(&self) -> Self {
        Self { wall_ms: None, ..self.clone() }
    }
}

/// Discriminator hinge loss on `real` and `G(latents)`; the generator is
/// recorded as constants so no gradient reaches it.
pub fn build_d_loss<T: Real>(
    gen: &GeneratorParams<T>,
    disc: &DiscriminatorParams<T>,
    real: &Tensor<T>,
    latents: &Tensor<T>,
) -> Result<(Graph<T>, Var)> {
    let mut g = Graph::new();
    let z = g.constant(latents);
    let fake = gen.forward(&mut g, z, false)?;
    let r = g.constant(real);
    let real_scores = disc.forward(&mut g, r, true)?;
    let fake_scores = disc.forward(&mut g, fake, true)?;
    let loss = hinge_d_loss(&mut g, real_scores, fake_scores)?;
    Ok((g, loss))
}

/// Generator hinge loss on `D(G(latents))` with the discriminator frozen.
pub fn build_g_loss<T: Real>(
    gen: &GeneratorParams<T>,
    disc: &DiscriminatorParams<T>,
    latents: &Tensor<T>,
) -> Result<(Graph<T>, Var)> {
    let mut g = Graph::new();
    let z = g.constant(latents);
    let fake = gen.forward(&mut g, z, true)?;
    let scores = disc.forward(&mut g, fake, false)?;
    let loss = hinge_g_loss(&mut g, scores)?;
    Ok((g, loss))
}

fn loss_value<T: Real>(g: &Graph<T>, v: Var) -> f64 {
    g.value(v)[0].to_f64_lossy()
}

fn check_loss(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("loss"))
    }
}

fn step_inner<T: Real>(state: &mut TrainState<T>, real: &Tensor<T>, cfg: &TrainConfig) -> Result<(f64, f64, f64, f64)> {
    let n = real.shape()[0];
    let latent = state.generator.spec.latent_dim;
    let hp_d = cfg.hyper(cfg.lr_d);
    let hp_g = cfg.hyper(cfg.lr_g);
    let (mut loss_d, mut norm_d) = (0.0, 0.0);
    for _ in 0..cfg.d_steps_per_g_step {
        state.discriminator.power_iterate(1);
        let z = sample_latents::<T, _>(&mut state.rng, n, latent);
        let (mut g, loss) = build_d_loss(&state.generator, &state.discriminator, real, &z)?;
        loss_d += check_loss(loss_value(&g, loss))?;
        g.backward(loss)?;
        state.discriminator.store_grads(&g);
        norm_d += state.discriminator.grad_norm();
        adam_step(&mut state.discriminator, &mut state.opt_d, &hp_d);
    }
    let k = cfg.d_steps_per_g_step as f64;
    let z = sample_latents::<T, _>(&mut state.rng, n, latent);
    let (mut g, loss) = build_g_loss(&state.generator, &state.discriminator, &z)?;
    let loss_g = check_loss(loss_value(&g, loss))?;
    g.backward(loss)?;
    state.generator.store_grads(&g);
    let norm_g = state.generator.grad_norm();
    adam_step(&mut state.generator, &mut state.opt_g, &hp_g);
    for v in [norm_d, norm_g] {
        check_loss(v)?;
    }
    Ok((loss_d / k, loss_g, norm_d / k, norm_g))
}

/// `d_steps_per_g_step` discriminator updates (fresh latents each, one
/// power iteration each) followed by one generator update.
///
/// A non-finite loss or activation restores the state as it was before the
/// call and marks the run collapsed; collapsed states are never mutated again.
pub fn train_step<T: Real>(state: &mut TrainState<T>, real: &Tensor<T>, cfg: &TrainConfig) -> Result<RunRecord> {
    let start = Instant::now();
    if state.collapsed {
        return Ok(RunRecord {
            step: state.step,
            loss_d: f64::NAN,
            loss_g: f64::NAN,
            grad_norm_d: f64::NAN,
            grad_norm_g: f64::NAN,
            wall_ms: Some(0.0),
            fid_proxy: None,
            collapsed: true,
        });
    }
    let backup = state.clone();
    match step_inner(state, real, cfg) {
        Ok((loss_d, loss_g, grad_norm_d, grad_norm_g)) => {
            state.step += 1;
            Ok(RunRecord {
                step: state.step,
                loss_d,
                loss_g,
                grad_norm_d,
                grad_norm_g,
                wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
                fid_proxy: None,
                collapsed: false,
            })
        }
        Err(Error::NonFinite(_)) => {
            *state = backup;
            state.collapsed = true;
            Ok(RunRecord {
                step: state.step,
                loss_d: f64::NAN,
                loss_g: f64::NAN,
                grad_norm_d: f64::NAN,
                grad_norm_g: f64::NAN,
                wall_ms: Some(start.elapsed().as_secs_f64() * 1e3),
                fid_proxy: None,
                collapsed: true,
            })
        }
        Err(e) => {
            *state = backup;
            Err(e)
        }
    }
}

/// FID between the first `n` real images and `n` generated ones.
/// Latents come from a generator seeded with `seed`, independent of training randomness.
pub fn fid_proxy<T: Real>(
    gen: &GeneratorParams<T>,
    real: &ImageBatch,
    n: usize,
    extractor: &dyn FeatureExtractor,
    seed: u64,
) -> Result<f64> {
    let real = real.head(n).cast::<f64>();
    let n = real.shape()[0];
    let fake = generate_batched(gen, n, seed)?.cast::<f64>();
    fid(&real, &fake, extractor)
}

/// Generates `n` images in chunks, latents drawn from `seed`.
pub fn generate_batched<T: Real>(gen: &GeneratorParams<T>, n: usize, seed: u64) -> Result<Tensor<T>> {
    const CHUNK: usize = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SEED_SALT);
    let mut data = Vec::new();
    let mut done = 0;
    let mut shape = vec![];
    while done < n {
        let k = CHUNK.min(n - done);
        let z = sample_latents::<T, _>(&mut rng, k, gen.spec.latent_dim);
        let imgs = gen.generate(&z)?;
        shape = imgs.shape().to_vec();
        data.extend_from_slice(imgs.data());
        done += k;
    }
    shape[0] = n;
    Tensor::new(&shape, data)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub records: Vec<RunRecord>,
    pub state: TrainState<f32>,
    /// FID-proxy before the first step (when evaluation is enabled).
    pub initial_fid: Option<f64>,
    pub final_fid: Option<f64>,
    pub collapsed: bool,
}

fn append_line(file: &mut Option<(std::fs::File, std::path::PathBuf)>, line: &str) -> Result<()> {
    if let Some((f, p)) = file {
        writeln!(f, "{line}").map_err(|e| Error::io(p.clone(), e))?;
    }
    Ok(())
}

/// Trains for `cfg.train.total_steps` steps on `data`.
///
/// With `out`, writes `log.jsonl` (one [`RunRecord`] per step), periodic
/// `checkpoint-<step>.hgan` files, `final.hgan` and a `samples.ppm` grid.
pub fn run_training(cfg: &RunConfig, data: &ImageBatch, out: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let r = cfg.generator.resolution();
    if data.resolution() != r || data.channels() != cfg.generator.out_channels {
        return Err(Error::dim(format!(
            "data is {}×{}×{} but the generator emits {}×{r}×{r}",
            data.channels(),
            data.resolution(),
            data.resolution(),
            cfg.generator.out_channels
        )));
    }
    if data.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 training images".into()));
    }
    let tc = &cfg.train;
    let mut state = TrainState::<f32>::new(&cfg.generator, &cfg.discriminator, tc.seed)?;
    let mut log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("log.jsonl");
            Some((std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    let evaluate = cfg.run.eval_every > 0;
    let extractor = cfg.run.extractor.build(data.channels());
    let eval =
        |state: &TrainState<f32>| fid_proxy(&state.generator, data, cfg.run.eval_samples, extractor.as_ref(), tc.seed);
    let initial_fid = if evaluate { Some(eval(&state)?) } else { None };
    let mut last_fid = initial_fid;

    let mut records = Vec::with_capacity(tc.total_steps as usize);
    for _ in 0..tc.total_steps {
        let idx: Vec<usize> = (0..tc.batch_size).map(|_| state.rng.random_range(0..data.len())).collect();
        let batch = data.select(&idx);
        let mut rec = train_step(&mut state, &batch, tc)?;
        let step = rec.step;
        if evaluate && !rec.collapsed && (step % cfg.run.eval_every == 0 || step == tc.total_steps) {
            let f = eval(&state)?;
            rec.fid_proxy = Some(f);
            last_fid = Some(f);
        }
        let logged = if cfg.run.log_timing { rec.clone() } else { rec.without_timing() };
        append_line(&mut log, &serde_json::to_string(&logged).expect("record serializes"))?;
        let collapsed = rec.collapsed;
        records.push(rec);
        if let Some(dir) = out {
            if !collapsed && cfg.run.checkpoint_every > 0 && step % cfg.run.checkpoint_every == 0 {
                save_checkpoint(&state, cfg, &dir.join(format!("checkpoint-{step:06}.hgan")))?;
            }
        }
        if collapsed {
            break;
        }
    }
    if let Some(dir) = out {
        save_checkpoint(&state, cfg, &dir.join("final.hgan"))?;
        let samples = generate_batched(&state.generator, cfg.run.sample_count, tc.seed)?;
        save_image_grid(&samples, &dir.join("samples.ppm"), 8)?;
    }
    let collapsed = state.collapsed;
    Ok(RunSummary { records, state, initial_fid, final_fid: if collapsed { None } else { last_fid }, collapsed })
}
