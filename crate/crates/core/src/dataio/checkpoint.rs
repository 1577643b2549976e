//! Checkpoint container.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! "HGAN" | version u32 | header_len u32 | header (JSON) | payload_len u64 | payload | sha256(header ‖ payload)
//! ```
//!
//! The header holds the step, optimizer step counts, random-source state,
//! the config text and the manifest of `(name, shape, offset, length)`
//! entries; the payload is every tensor as little-endian `f32`.

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::Params;
use crate::tensor::Tensor;
use crate::training::TrainState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HGAN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Byte length.
    length: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    step: u64,
    adam_t_g: u64,
    adam_t_d: u64,
    collapsed: bool,
    rng_seed: [u8; 32],
    rng_stream: u64,
    /// Decimal, since JSON numbers cannot carry a u128.
    rng_word_pos: String,
    config: String,
    manifest: Vec<Entry>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corruption(msg.into())
}

/// Every tensor of the state in manifest order.
fn tensors(state: &TrainState<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out = Vec::new();
    for (n, t) in state.generator.named() {
        out.push((format!("g.{n}"), t.clone()));
    }
    for (n, t) in state.discriminator.named() {
        out.push((format!("d.{n}"), t.clone()));
    }
    state.discriminator.visit_sn(&mut |n, s| out.push((format!("d.{n}"), s.u.clone())));
    for (tag, names, opt) in
        [("g", state.generator.named(), &state.opt_g), ("d", state.discriminator.named(), &state.opt_d)]
    {
        for ((n, _), m) in names.iter().zip(&opt.m) {
            out.push((format!("opt.{tag}.m.{n}"), m.clone()));
        }
        for ((n, _), v) in names.iter().zip(&opt.v) {
            out.push((format!("opt.{tag}.v.{n}"), v.clone()));
        }
    }
    out
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint(state: &TrainState<f32>, cfg: &RunConfig) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut manifest = Vec::new();
    for (name, t) in tensors(state) {
        let offset = payload.len() as u64;
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        manifest.push(Entry { name, shape: t.shape().to_vec(), offset, length: payload.len() as u64 - offset });
    }
    let header = Header {
        step: state.step,
        adam_t_g: state.opt_g.t,
        adam_t_d: state.opt_d.t,
        collapsed: state.collapsed,
        rng_seed: state.rng.get_seed(),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
        config: cfg.to_text(),
        manifest,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut hasher = Sha256::new();
    hasher.update(&header);
    hasher.update(&payload);
    let digest = hasher.finalize();

    let mut out = Vec::with_capacity(payload.len() + header.len() + 52);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint(state: &TrainState<f32>, cfg: &RunConfig, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state, cfg)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("file ends inside {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Validates framing and checksum; returns the header and payload.
fn parse_container(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let mut r = Reader { bytes, pos: 8 };
    let header_len = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header_bytes = r.take(header_len, "header")?;
    let payload_len = u64::from_le_bytes(r.take(8, "payload length")?.try_into().expect("8 bytes"));
    let payload = r.take(usize::try_from(payload_len).map_err(|_| corrupt("payload length overflows"))?, "payload")?;
    let digest = r.take(32, "checksum")?;
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes after checksum", bytes.len() - r.pos)));
    }
    let mut hasher = Sha256::new();
    hasher.update(header_bytes);
    hasher.update(payload);
    if hasher.finalize().as_slice() != digest {
        return Err(corrupt("checksum mismatch"));
    }
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| corrupt(format!("header: {e}")))?;
    Ok((header, payload))
}

/// Tensor names and shapes listed in a checkpoint, in payload order.
pub fn checkpoint_manifest(bytes: &[u8]) -> Result<Vec<(String, Vec<usize>)>> {
    let (header, _) = parse_container(bytes)?;
    Ok(header.manifest.into_iter().map(|e| (e.name, e.shape)).collect())
}

/// Parses checkpoint bytes back into a state and its config.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(TrainState<f32>, RunConfig)> {
    let (header, payload) = parse_container(bytes)?;
    let payload_len = payload.len() as u64;
    let cfg = RunConfig::parse(&header.config).map_err(|e| corrupt(format!("config echo: {e}")))?;

    let mut by_name = HashMap::new();
    let mut spans: Vec<(u64, u64)> = Vec::new();
    for e in &header.manifest {
        let expected = e.shape.iter().product::<usize>() as u64 * 4;
        if e.length != expected || e.offset.checked_add(e.length).is_none_or(|end| end > payload_len) {
            return Err(corrupt(format!("manifest entry {} does not fit the payload", e.name)));
        }
        spans.push((e.offset, e.offset + e.length));
        if by_name.insert(e.name.as_str(), e).is_some() {
            return Err(corrupt(format!("manifest lists {} twice", e.name)));
        }
    }
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(corrupt("manifest entries overlap"));
    }

    let mut state = TrainState::<f32>::new(&cfg.generator, &cfg.discriminator, cfg.train.seed)
        .map_err(|e| corrupt(format!("config echo: {e}")))?;
    let expected = tensors(&state);
    if expected.len() != header.manifest.len() {
        return Err(corrupt(format!(
            "manifest has {} tensors, configuration needs {}",
            header.manifest.len(),
            expected.len()
        )));
    }
    let mut loaded: HashMap<String, Vec<f32>> = HashMap::new();
    for (name, t) in &expected {
        let e = by_name.get(name.as_str()).ok_or_else(|| corrupt(format!("manifest lacks {name}")))?;
        if e.shape != t.shape() {
            return Err(corrupt(format!("{name}: shape {:?}, expected {:?}", e.shape, t.shape())));
        }
        let raw = &payload[e.offset as usize..(e.offset + e.length) as usize];
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        loaded.insert(name.clone(), data);
    }
    let mut take = |name: String, t: &mut Tensor<f32>| {
        t.data_mut().copy_from_slice(&loaded.remove(&name).expect("checked above"));
    };
    state.generator.visit_mut("", &mut |n, t| take(format!("g.{n}"), t));
    state.discriminator.visit_mut("", &mut |n, t| take(format!("d.{n}"), t));
    state.discriminator.visit_sn_mut(&mut |n, s| take(format!("d.{n}"), &mut s.u));
    let g_names: Vec<String> = state.generator.named().into_iter().map(|(n, _)| n).collect();
    let d_names: Vec<String> = state.discriminator.named().into_iter().map(|(n, _)| n).collect();
    for (tag, names, opt) in [("g", &g_names, &mut state.opt_g), ("d", &d_names, &mut state.opt_d)] {
        for (n, m) in names.iter().zip(opt.m.iter_mut()) {
            take(format!("opt.{tag}.m.{n}"), m);
        }
        for (n, v) in names.iter().zip(opt.v.iter_mut()) {
            take(format!("opt.{tag}.v.{n}"), v);
        }
    }
    state.step = header.step;
    state.opt_g.t = header.adam_t_g;
    state.opt_d.t = header.adam_t_d;
    state.collapsed = header.collapsed;
    let word_pos: u128 = header.rng_word_pos.parse().map_err(|_| corrupt("rng word position"))?;
    let mut rng = ChaCha8Rng::from_seed(header.rng_seed);
    rng.set_stream(header.rng_stream);
    rng.set_word_pos(word_pos);
    state.rng = rng;
    Ok((state, cfg))
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainState<f32>, RunConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
