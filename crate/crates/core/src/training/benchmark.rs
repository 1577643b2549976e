use super::trainer::run_training;
use crate::config::RunConfig;
use crate::dataio::ImageBatch;
use crate::discriminator::DiscriminatorSpec;
use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

pub const BENCHMARK_VARIANTS: [&str; 3] = ["sngan", "sngan_no_sn", "dcgan"];

/// One row of the discriminator-swap table.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub discriminator: String,
    pub params: usize,
    /// Final FID-proxy; `None` for a collapsed run.
    pub fid_proxy: Option<f64>,
    pub collapsed: bool,
}

/// Per-variant seed: FNV-1a of the name mixed into the base seed.
fn variant_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    seed ^ h
}

/// Trains the configured generator against each discriminator preset and
/// reports parameter counts and final FID-proxy. Variants run on separate
/// threads; rows come back in input order.
pub fn run_benchmark(variants: &[&str], cfg: &RunConfig, data: &ImageBatch) -> Result<Vec<BenchmarkRow>> {
    if variants.is_empty() {
        return Err(Error::config("benchmark needs at least one discriminator variant"));
    }
    let mut configs = Vec::with_capacity(variants.len());
    for &name in variants {
        let mut c = cfg.clone();
        let mut d = DiscriminatorSpec::preset(name, cfg.generator.resolution())?;
        d.in_channels = cfg.generator.out_channels;
        c.discriminator = d;
        c.discriminator_preset = name.to_string();
        c.train.seed = variant_seed(cfg.train.seed, name);
        if c.run.eval_every == 0 {
            c.run.eval_every = c.train.total_steps.max(1);
        }
        c.validate()?;
        configs.push(c);
    }
    let results: Vec<Result<BenchmarkRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| {
                s.spawn(move || {
                    let summary = run_training(c, data, None)?;
                    Ok(BenchmarkRow {
                        discriminator: c.discriminator_preset.clone(),
                        params: c.discriminator.param_count(),
                        fid_proxy: summary.final_fid,
                        collapsed: summary.collapsed,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect()
    });
    results.into_iter().collect()
}

/// CSV with columns `discriminator,params,fid_proxy,collapsed`; collapsed runs leave `fid_proxy` empty.
pub fn write_benchmark_csv(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    let mut out = String::from("discriminator,params,fid_proxy,collapsed\n");
    for r in rows {
        let fid = r.fid_proxy.map(|f| format!("{f:.6}")).unwrap_or_default();
        out.push_str(&format!("{},{},{},{}\n", r.discriminator, r.params, fid, r.collapsed));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
