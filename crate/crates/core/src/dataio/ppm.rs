use super::{load_cifar10, ImageBatch};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// `[−1, 1] → 0..=255` with clamping and round-half-up.
pub fn unit_to_byte(v: f32) -> u8 {
    ((v as f64 + 1.0) * 127.5 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn byte_to_unit(b: u8) -> f32 {
    (b as f64 / 127.5 - 1.0) as f32
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    debug_assert_eq!(rgb.len(), width * height * 3);
    let mut bytes = format!("P6\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(rgb);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a binary (P6, maxval 255) PPM; returns `(width, height, rgb bytes)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display();
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(format!("{name}: truncated PPM header")));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte after maxval
    if fields[0] != "P6" {
        return Err(Error::format(format!("{name}: not a binary PPM (magic {:?})", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("{name}: bad header field {s:?}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max != 255 {
        return Err(Error::format(format!("{name}: unsupported maxval {max}")));
    }
    let payload = bytes.get(pos..).unwrap_or_default();
    if payload.len() != w * h * 3 {
        return Err(Error::format(format!("{name}: payload has {} bytes, expected {}", payload.len(), w * h * 3)));
    }
    Ok((w, h, payload.to_vec()))
}

/// Tiles an `N×C×H×W` batch (C = 1 or 3) into a grid with `cols` columns and
/// writes it as P6. Unused cells are black.
pub fn save_image_grid(images: &Tensor<f32>, path: &Path, cols: usize) -> Result<()> {
    let s = images.shape();
    if s.len() != 4 || !(s[1] == 1 || s[1] == 3) {
        return Err(Error::dim(format!("image grid needs N×(1|3)×H×W, got {s:?}")));
    }
    if cols == 0 {
        return Err(Error::config("grid needs at least one column"));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let cols = cols.min(n);
    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * w, rows * h);
    let mut rgb = vec![0u8; gw * gh * 3];
    let data = images.data();
    for i in 0..n {
        let (oy, ox) = ((i / cols) * h, (i % cols) * w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    let src = if c == 1 { 0 } else { ch };
                    let v = data[((i * c + src) * h + y) * w + x];
                    rgb[((oy + y) * gw + ox + x) * 3 + ch] = unit_to_byte(v);
                }
            }
        }
    }
    write_ppm(path, gw, gh, &rgb)
}

fn ppm_to_images(w: usize, h: usize, rgb: &[u8], tile: usize) -> Result<Vec<f32>> {
    if tile == 0 || !w.is_multiple_of(tile) || !h.is_multiple_of(tile) {
        return Err(Error::dim(format!("{w}×{h} image does not split into {tile}×{tile} tiles")));
    }
    let (tx, ty) = (w / tile, h / tile);
    let mut out = Vec::with_capacity(w * h * 3);
    for r in 0..ty {
        for c in 0..tx {
            for ch in 0..3 {
                for y in 0..tile {
                    for x in 0..tile {
                        out.push(byte_to_unit(rgb[((r * tile + y) * w + c * tile + x) * 3 + ch]));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Loads images from a CIFAR-10 `.bin` file, a directory of `.ppm` files
/// (one image each), or a single `.ppm` optionally split into `tile`-sized squares.
pub fn load_images(path: &Path, tile: Option<usize>) -> Result<ImageBatch> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "ppm" || e == "bin"))
            .collect();
        files.sort();
        if files.iter().all(|p| p.extension().is_some_and(|e| e == "bin")) && !files.is_empty() {
            return load_cifar10(path);
        }
        let mut data = Vec::new();
        let mut size = None;
        let mut n = 0;
        for f in files.iter().filter(|p| p.extension().is_some_and(|e| e == "ppm")) {
            let (w, h, rgb) = read_ppm(f)?;
            let t = tile.unwrap_or(w);
            if size.is_some_and(|s| s != t) {
                return Err(Error::dim(format!("{}: image size {t} differs from {}", f.display(), size.unwrap())));
            }
            size = Some(t);
            n += (w / t) * (h / t);
            data.extend(ppm_to_images(w, h, &rgb, t)?);
        }
        let Some(t) = size else {
            return Err(Error::format(format!("{}: no .ppm images", path.display())));
        };
        return ImageBatch::new(Tensor::new(&[n, 3, t, t], data)?, None);
    }
    if path.extension().is_some_and(|e| e == "bin") {
        return load_cifar10(path);
    }
    let (w, h, rgb) = read_ppm(path)?;
    let t = tile.unwrap_or(w);
    let n = (w / t.max(1)) * (h / t.max(1));
    let data = ppm_to_images(w, h, &rgb, t)?;
    ImageBatch::new(Tensor::new(&[n, 3, t, t], data)?, None)
}
