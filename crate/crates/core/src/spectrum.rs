//! Fourier power spectrum and azimuthal integration of images.
//!
//! The spectrum is the unnormalized forward DFT's squared magnitude with
//! the zero frequency moved to `(R/2, R/2)`. Azimuthal integration sums the
//! spectrum over rings of equal rounded radius around that center.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::io::Write;
use std::path::Path;

/// `R×R` centered power spectrum, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub size: usize,
    pub data: Vec<f64>,
}

/// Per-bin statistics of azimuthal profiles over an image set.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumProfile {
    pub bins: Vec<usize>,
    pub mean: Vec<f64>,
    /// Population variance across images.
    pub variance: Vec<f64>,
    pub n_images: usize,
    pub normalized: bool,
}

/// Largest radial bin index for an `R×R` image: `floor(√2·R/2)`.
pub fn max_bin(size: usize) -> usize {
    (size * size / 2).isqrt()
}

/// Rounded distance of `(y, x)` from the spectrum center, clamped to [`max_bin`].
///
/// Computed in integers: radius `k` holds squared distances in `(k(k−1), k(k+1)]`.
pub fn radius_bin(y: usize, x: usize, size: usize) -> usize {
    let c = (size / 2) as isize;
    let (dy, dx) = (y as isize - c, x as isize - c);
    let d2 = (dy * dy + dx * dx) as usize;
    let mut k = d2.isqrt();
    if d2 > k * (k + 1) {
        k += 1;
    }
    k.min(max_bin(size))
}

/// Centered `|DFT2(image)|²` of a square row-major grayscale image.
pub fn power_spectrum2d(image: &[f64], height: usize, width: usize) -> Result<PowerSpectrum> {
    if height != width {
        return Err(Error::dim(format!("power spectrum needs a square image, got {height}×{width}")));
    }
    let r = height;
    if r < 2 || image.len() != r * r {
        return Err(Error::dim(format!("power spectrum needs R ≥ 2 and R² pixels (R={r}, {} given)", image.len())));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(r);
    let mut buf: Vec<Complex<f64>> = image.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(r) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); r];
    for x in 0..r {
        for y in 0..r {
            col[y] = buf[y * r + x];
        }
        fft.process(&mut col);
        for y in 0..r {
            buf[y * r + x] = col[y];
        }
    }
    let half = r / 2;
    let mut data = vec![0.0; r * r];
    for y in 0..r {
        for x in 0..r {
            data[((y + half) % r) * r + (x + half) % r] = buf[y * r + x].norm_sqr();
        }
    }
    Ok(PowerSpectrum { size: r, data })
}

/// Ring sums of a centered spectrum; bins `0..=max_bin(R)`.
/// With `normalize`, every bin is divided by bin 0.
pub fn azimuthal_profile(ps: &PowerSpectrum, normalize: bool) -> Vec<f64> {
    let r = ps.size;
    let mut bins = vec![0.0; max_bin(r) + 1];
    for y in 0..r {
        for x in 0..r {
            bins[radius_bin(y, x, r)] += ps.data[y * r + x];
        }
    }
    if normalize && bins[0] != 0.0 {
        let dc = bins[0];
        bins.iter_mut().for_each(|b| *b /= dc);
    }
    bins
}

/// Luminance of an RGB image with channels in [−1, 1], mapped to [0, 1] first.
/// Single-channel images are only mapped.
pub fn to_grayscale(pixels: &[f64], channels: usize, plane: usize) -> Result<Vec<f64>> {
    let to_unit = |v: f64| (v + 1.0) * 0.5;
    match channels {
        1 => Ok(pixels.iter().map(|&v| to_unit(v)).collect()),
        3 => Ok((0..plane)
            .map(|i| {
                0.299 * to_unit(pixels[i]) + 0.587 * to_unit(pixels[plane + i]) + 0.114 * to_unit(pixels[2 * plane + i])
            })
            .collect()),
        c => Err(Error::dim(format!("grayscale conversion needs 1 or 3 channels, got {c}"))),
    }
}

/// Azimuthal profile of one `C×R×R` image (values in [−1, 1]).
pub fn image_profile(pixels: &[f64], channels: usize, size: usize, normalize: bool) -> Result<Vec<f64>> {
    let gray = to_grayscale(pixels, channels, size * size)?;
    Ok(azimuthal_profile(&power_spectrum2d(&gray, size, size)?, normalize))
}

/// Per-bin mean and population variance of the profiles of every image in
/// an `N×C×R×R` batch. Images are reduced in batch order.
pub fn profile_stats(images: &[f64], shape: &[usize], normalize: bool) -> Result<SpectrumProfile> {
    if shape.len() != 4 || shape[0] == 0 {
        return Err(Error::dim(format!("profile_stats expects a non-empty N×C×H×W batch, got {shape:?}")));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if h != w {
        return Err(Error::dim(format!("profile_stats needs square images, got {h}×{w}")));
    }
    let per = c * h * w;
    let profiles =
        (0..n).map(|i| image_profile(&images[i * per..(i + 1) * per], c, h, normalize)).collect::<Result<Vec<_>>>()?;
    Ok(stats_from_profiles(&profiles, normalize))
}

/// Profile statistics over a list of separately-sized image sets; all must share one resolution.
pub fn profile_stats_sets(sets: &[(&[f64], &[usize])], normalize: bool) -> Result<SpectrumProfile> {
    let sizes: Vec<usize> = sets.iter().map(|(_, s)| s.get(2).copied().unwrap_or(0)).collect();
    if sizes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::dim(format!("mixed image resolutions {sizes:?}")));
    }
    let mut profiles = Vec::new();
    for (data, shape) in sets {
        if shape.len() != 4 {
            return Err(Error::dim(format!("expected N×C×H×W, got {shape:?}")));
        }
        let per = shape[1] * shape[2] * shape[3];
        for i in 0..shape[0] {
            profiles.push(image_profile(&data[i * per..(i + 1) * per], shape[1], shape[2], normalize)?);
        }
    }
    if profiles.is_empty() {
        return Err(Error::InsufficientData("no images".into()));
    }
    Ok(stats_from_profiles(&profiles, normalize))
}

fn stats_from_profiles(profiles: &[Vec<f64>], normalized: bool) -> SpectrumProfile {
    let k = profiles[0].len();
    let n = profiles.len() as f64;
    let mut mean = vec![0.0; k];
    for p in profiles {
        for (m, &v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut variance = vec![0.0; k];
    for p in profiles {
        for ((s, &v), &m) in variance.iter_mut().zip(p).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= n);
    SpectrumProfile { bins: (0..k).collect(), mean, variance, n_images: profiles.len(), normalized }
}

/// Writes `bin,mean_a,var_a[,mean_b,var_b]` rows.
pub fn write_profile_csv(path: &Path, a: &SpectrumProfile, b: Option<&SpectrumProfile>) -> Result<()> {
    if let Some(b) = b {
        if b.bins.len() != a.bins.len() {
            return Err(Error::dim(format!(
                "profiles have {} and {} bins (different resolutions)",
                a.bins.len(),
                b.bins.len()
            )));
        }
    }
    let mut out = String::new();
    out.push_str(if b.is_some() { "bin,mean_a,var_a,mean_b,var_b\n" } else { "bin,mean_a,var_a\n" });
    for k in 0..a.bins.len() {
        out.push_str(&format!("{},{:e},{:e}", a.bins[k], a.mean[k], a.variance[k]));
        if let Some(b) = b {
            out.push_str(&format!(",{:e},{:e}", b.mean[k], b.variance[k]));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
