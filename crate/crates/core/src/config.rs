//! Run configuration and its flat `key = value` text form.
//!
//! Lines are `key = value`; blank lines and `#` comments are ignored.
//! `generator` and `discriminator` select presets, which are applied before
//! any `g.*` / `d.*` field override regardless of line order. Unknown or
//! repeated keys are rejected.

use crate::discriminator::{DiscriminatorSpec, DiscriminatorVariant};
use crate::error::{Error, Result};
use crate::generator::GeneratorSpec;
use crate::metrics::ExtractorKind;
use crate::training::TrainConfig;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

/// Evaluation, checkpointing and data options of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Steps between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Steps between FID-proxy evaluations; 0 disables evaluation.
    pub eval_every: u64,
    pub eval_samples: usize,
    pub extractor: ExtractorKind,
    /// Images in the final sample grid.
    pub sample_count: usize,
    /// Write measured `wall_ms` into the log (makes logs run-dependent).
    pub log_timing: bool,
    /// Default dataset: `synthetic:<kind>` or a path.
    pub data: String,
    /// Size of a synthetic dataset.
    pub data_n: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            checkpoint_every: 500,
            eval_every: 250,
            eval_samples: 1000,
            extractor: ExtractorKind::Identity,
            sample_count: 64,
            log_timing: false,
            data: "synthetic:two_mode".into(),
            data_n: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator_preset: String,
    pub generator: GeneratorSpec,
    pub discriminator_preset: String,
    pub discriminator: DiscriminatorSpec,
    pub run: RunOptions,
}

impl Default for RunConfig {
    /// Tiny generator against the toy SNGAN discriminator on 8×8 images.
    fn default() -> Self {
        let generator = GeneratorSpec::tiny();
        let discriminator = DiscriminatorSpec::preset("sngan", generator.resolution()).expect("built-in preset");
        Self {
            train: TrainConfig { total_steps: 2000, ..TrainConfig::default() },
            generator_preset: "tiny".into(),
            generator,
            discriminator_preset: "sngan".into(),
            discriminator,
            run: RunOptions::default(),
        }
    }
}

fn key_err(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::config(format!("key {key:?}: {msg}"))
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value.parse().map_err(|e| key_err(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>>
where
    V::Err: std::fmt::Display,
{
    value.split(',').map(|s| parse(key, s.trim())).collect()
}

fn join_list<V: ToString>(xs: &[V]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        let r = self.generator.resolution();
        if self.discriminator.resolution != r || self.discriminator.in_channels != self.generator.out_channels {
            return Err(Error::config(format!(
                "generator emits {}×{r}×{r} images but discriminator expects {}×{d}×{d}",
                self.generator.out_channels,
                self.discriminator.in_channels,
                d = self.discriminator.resolution
            )));
        }
        if self.run.eval_every > 0 && self.run.eval_samples < 2 {
            return Err(key_err("eval_samples", "must be >= 2 when evaluation is enabled"));
        }
        if self.run.sample_count == 0 {
            return Err(key_err("sample_count", "must be >= 1"));
        }
        Ok(())
    }

    /// Parses and validates a config text.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value, got {line:?}", lineno + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.insert(k.clone(), v).is_some() {
                return Err(key_err(&k, "given more than once"));
            }
        }

        let mut cfg = RunConfig::default();
        if let Some(name) = entries.remove("generator") {
            cfg.generator = GeneratorSpec::preset(&name).map_err(|e| key_err("generator", e))?;
            cfg.generator_preset = name;
        }
        let g_keys: Vec<String> = entries.keys().filter(|k| k.starts_with("g.")).cloned().collect();
        for k in g_keys {
            let v = entries.remove(&k).expect("key listed");
            let g = &mut cfg.generator;
            match &k[2..] {
                "latent_dim" => g.latent_dim = parse(&k, &v)?,
                "base_grid" => g.base_grid = parse(&k, &v)?,
                "embed_dim" => g.embed_dim = parse(&k, &v)?,
                "depths" => g.depths = parse_list(&k, &v)?,
                "heads" => g.heads = parse(&k, &v)?,
                "mlp_ratio" => g.mlp_ratio = parse(&k, &v)?,
                "out_channels" => g.out_channels = parse(&k, &v)?,
                _ => return Err(key_err(&k, "unknown key")),
            }
        }
        let name = entries.remove("discriminator").unwrap_or_else(|| cfg.discriminator_preset.clone());
        cfg.discriminator =
            DiscriminatorSpec::preset(&name, cfg.generator.resolution()).map_err(|e| key_err("discriminator", e))?;
        cfg.discriminator.in_channels = cfg.generator.out_channels;
        cfg.discriminator_preset = name;
        let d_keys: Vec<String> = entries.keys().filter(|k| k.starts_with("d.")).cloned().collect();
        for k in d_keys {
            let v = entries.remove(&k).expect("key listed");
            let d = &mut cfg.discriminator;
            match &k[2..] {
                "in_channels" => d.in_channels = parse(&k, &v)?,
                "resolution" => d.resolution = parse(&k, &v)?,
                "base_width" => d.base_width = parse(&k, &v)?,
                "n_blocks" => d.n_blocks = parse(&k, &v)?,
                "downsample" => d.downsample = parse_list(&k, &v)?,
                "variant" => d.variant = parse::<DiscriminatorVariant>(&k, &v)?,
                _ => return Err(key_err(&k, "unknown key")),
            }
        }

        for (k, v) in &entries {
            let t = &mut cfg.train;
            let r = &mut cfg.run;
            match k.as_str() {
                "seed" => t.seed = parse(k, v)?,
                "lr_g" => t.lr_g = parse(k, v)?,
                "lr_d" => t.lr_d = parse(k, v)?,
                "adam_beta1" => t.adam_beta1 = parse(k, v)?,
                "adam_beta2" => t.adam_beta2 = parse(k, v)?,
                "adam_eps" => t.adam_eps = parse(k, v)?,
                "batch_size" => t.batch_size = parse(k, v)?,
                "total_steps" => t.total_steps = parse(k, v)?,
                "d_steps_per_g_step" => t.d_steps_per_g_step = parse(k, v)?,
                "use_sn" => cfg.discriminator.use_sn = parse(k, v)?,
                "checkpoint_every" => r.checkpoint_every = parse(k, v)?,
                "eval_every" => r.eval_every = parse(k, v)?,
                "eval_samples" => r.eval_samples = parse(k, v)?,
                "extractor" => r.extractor = parse(k, v)?,
                "sample_count" => r.sample_count = parse(k, v)?,
                "log_timing" => r.log_timing = parse(k, v)?,
                "data" => r.data = v.clone(),
                "data_n" => r.data_n = parse(k, v)?,
                _ => return Err(key_err(k, "unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Full text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let (t, g, d, r) = (&self.train, &self.generator, &self.discriminator, &self.run);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("generator", self.generator_preset.clone());
        kv("g.latent_dim", g.latent_dim.to_string());
        kv("g.base_grid", g.base_grid.to_string());
        kv("g.embed_dim", g.embed_dim.to_string());
        kv("g.depths", join_list(&g.depths));
        kv("g.heads", g.heads.to_string());
        kv("g.mlp_ratio", format!("{:?}", g.mlp_ratio));
        kv("g.out_channels", g.out_channels.to_string());
        kv("discriminator", self.discriminator_preset.clone());
        kv("d.in_channels", d.in_channels.to_string());
        kv("d.resolution", d.resolution.to_string());
        kv("d.base_width", d.base_width.to_string());
        kv("d.n_blocks", d.n_blocks.to_string());
        kv("d.downsample", join_list(&d.downsample));
        kv("d.variant", d.variant.to_string());
        kv("use_sn", d.use_sn.to_string());
        kv("seed", t.seed.to_string());
        kv("lr_g", format!("{:?}", t.lr_g));
        kv("lr_d", format!("{:?}", t.lr_d));
        kv("adam_beta1", format!("{:?}", t.adam_beta1));
        kv("adam_beta2", format!("{:?}", t.adam_beta2));
        kv("adam_eps", format!("{:?}", t.adam_eps));
        kv("batch_size", t.batch_size.to_string());
        kv("total_steps", t.total_steps.to_string());
        kv("d_steps_per_g_step", t.d_steps_per_g_step.to_string());
        kv("checkpoint_every", r.checkpoint_every.to_string());
        kv("eval_every", r.eval_every.to_string());
        kv("eval_samples", r.eval_samples.to_string());
        kv("extractor", r.extractor.to_string());
        kv("sample_count", r.sample_count.to_string());
        kv("log_timing", r.log_timing.to_string());
        kv("data", r.data.clone());
        kv("data_n", r.data_n.to_string());
        s
    }
}
