use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hgan::config::RunConfig;
use hgan::dataio::{load_checkpoint, load_images, make_synthetic, save_image_grid, ImageBatch, SyntheticKind};
use hgan::metrics::{fid, ExtractorKind};
use hgan::spectrum::{profile_stats, write_profile_csv};
use hgan::training::{generate_batched, run_benchmark, run_training, write_benchmark_csv, BENCHMARK_VARIANTS};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "hgan", version, about = "Transformer-generator GAN toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator/discriminator pair.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// `synthetic:<kind>` or a dataset path; defaults to the config's `data` key.
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a PPM grid of samples from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        cols: usize,
    },
    /// FID-proxy between two image sets.
    Fid {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long, default_value = "identity")]
        extractor: ExtractorKind,
        /// Tile size for splitting grid images.
        #[arg(long)]
        tile: Option<usize>,
    },
    /// Azimuthally integrated power spectra as CSV.
    Spectrum {
        #[arg(long)]
        set_a: PathBuf,
        #[arg(long)]
        set_b: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        normalize: bool,
        #[arg(long)]
        tile: Option<usize>,
    },
    /// Train against several discriminators and tabulate the results.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated discriminator presets.
        #[arg(long, default_value = "sngan,sngan_no_sn,dcgan")]
        discriminators: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_data(spec: &str, cfg: &RunConfig) -> Result<ImageBatch> {
    let r = cfg.generator.resolution();
    let batch = match spec.strip_prefix("synthetic:") {
        Some(kind) => {
            let kind: SyntheticKind = kind.parse()?;
            make_synthetic(kind, cfg.run.data_n, r, cfg.train.seed)?
        }
        None => load_images(Path::new(spec), Some(r)).with_context(|| format!("loading {spec}"))?,
    };
    if batch.resolution() != r || batch.channels() != cfg.generator.out_channels {
        bail!(
            "dataset {spec} holds {}×{}×{} images, the generator produces {}×{r}×{r}",
            batch.channels(),
            batch.resolution(),
            batch.resolution(),
            cfg.generator.out_channels
        );
    }
    Ok(batch)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, data, out, seed } => {
            let cfg = load_config(&config, seed)?;
            let data = load_data(data.as_deref().unwrap_or(&cfg.run.data), &cfg)?;
            let summary = run_training(&cfg, &data, Some(&out))?;
            if summary.collapsed {
                eprintln!("run collapsed at step {}", summary.state.step);
            }
            if let (Some(a), Some(b)) = (summary.initial_fid, summary.final_fid) {
                eprintln!("fid_proxy: {a:.6} -> {b:.6}");
            }
        }
        Command::Sample { checkpoint, n, out, seed, cols } => {
            if n == 0 || cols == 0 {
                bail!("--n and --cols must be positive");
            }
            let (state, _) = load_checkpoint(&checkpoint)?;
            let images = generate_batched(&state.generator, n, seed)?;
            save_image_grid(&images, &out, cols)?;
        }
        Command::Fid { real, fake, extractor, tile } => {
            let a = load_images(&real, tile)?;
            let b = load_images(&fake, tile)?;
            if a.channels() != b.channels() {
                bail!("image sets have {} and {} channels", a.channels(), b.channels());
            }
            let ext = extractor.build(a.channels());
            let value = fid(&a.images.cast::<f64>(), &b.images.cast::<f64>(), ext.as_ref())?;
            println!("{value:.6}");
            let line = serde_json::json!({
                "metric": "fid_proxy",
                "extractor": extractor.to_string(),
                "real": real.display().to_string(),
                "fake": fake.display().to_string(),
                "n_real": a.len(),
                "n_fake": b.len(),
                "value": value,
            });
            eprintln!("{line}");
        }
        Command::Spectrum { set_a, set_b, out, normalize, tile } => {
            let stats = |p: &Path| -> Result<_> {
                let batch = load_images(p, tile)?;
                let t = batch.images.cast::<f64>();
                Ok(profile_stats(t.data(), t.shape(), normalize)?)
            };
            let a = stats(&set_a)?;
            let b = set_b.as_deref().map(stats).transpose()?;
            write_profile_csv(&out, &a, b.as_ref())?;
        }
        Command::Benchmark { config, discriminators, out, data, seed } => {
            let cfg = load_config(&config, seed)?;
            let variants: Vec<&str> = discriminators.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            for v in &variants {
                if !BENCHMARK_VARIANTS.contains(v) {
                    bail!("unknown discriminator {v:?} (expected one of {})", BENCHMARK_VARIANTS.join(", "));
                }
            }
            let data = load_data(data.as_deref().unwrap_or(&cfg.run.data), &cfg)?;
            let rows = run_benchmark(&variants, &cfg, &data)?;
            write_benchmark_csv(&out, &rows)?;
            for r in &rows {
                let fid = r.fid_proxy.map(|f| format!("{f:.6}")).unwrap_or_else(|| "-".into());
                eprintln!(
                    "{:<12} {:>10} {:>12} {}",
                    r.discriminator,
                    r.params,
                    fid,
                    if r.collapsed { "collapsed" } else { "" }
                );
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
