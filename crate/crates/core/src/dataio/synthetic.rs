use super::ImageBatch;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// Half the images sit around +0.5, half around −0.5, with pixel noise.
    TwoMode,
    /// ±1 checkerboard of period 2 with random amplitude and phase.
    Checkerboard,
    /// One to three coloured Gaussian blobs on a dark background.
    GaussianBlobs,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_mode" => Ok(Self::TwoMode),
            "checkerboard" => Ok(Self::Checkerboard),
            "gaussian_blobs" => Ok(Self::GaussianBlobs),
            _ => Err(Error::config(format!("unknown synthetic dataset {s:?} (two_mode|checkerboard|gaussian_blobs)"))),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::TwoMode => "two_mode",
            SyntheticKind::Checkerboard => "checkerboard",
            SyntheticKind::GaussianBlobs => "gaussian_blobs",
        })
    }
}

const TWO_MODE_NOISE: f64 = 0.1;

/// Deterministic `n×3×R×R` synthetic images, a pure function of its arguments.
pub fn make_synthetic(kind: SyntheticKind, n: usize, resolution: usize, seed: u64) -> Result<ImageBatch> {
    if n == 0 {
        return Err(Error::config("synthetic dataset needs n >= 1"));
    }
    if ![8, 16, 32].contains(&resolution) {
        return Err(Error::config(format!("synthetic resolution must be 8, 16 or 32, got {resolution}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = resolution * resolution;
    let per = 3 * plane;
    let mut data = vec![0.0f32; n * per];
    match kind {
        SyntheticKind::TwoMode => {
            let mut signs: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { -1.0 }).collect();
            signs.shuffle(&mut rng);
            let noise = Normal::new(0.0, TWO_MODE_NOISE).expect("valid std");
            for (img, &s) in data.chunks_exact_mut(per).zip(&signs) {
                for v in img.iter_mut() {
                    *v = (0.5 * s + noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32;
                }
            }
        }
        SyntheticKind::Checkerboard => {
            let noise = Normal::new(0.0, 0.05).expect("valid std");
            for img in data.chunks_exact_mut(per) {
                let amp: f64 = rng.random_range(0.3..0.9);
                let phase = rng.random_range(0..2usize);
                for c in 0..3 {
                    for y in 0..resolution {
                        for x in 0..resolution {
                            let sign = if (x + y + phase) % 2 == 0 { 1.0 } else { -1.0 };
                            img[c * plane + y * resolution + x] =
                                (amp * sign + noise.sample(&mut rng)).clamp(-1.0, 1.0) as f32;
                        }
                    }
                }
            }
        }
        SyntheticKind::GaussianBlobs => {
            let r = resolution as f64;
            for img in data.chunks_exact_mut(per) {
                let blobs = rng.random_range(1..=3usize);
                let params: Vec<_> = (0..blobs)
                    .map(|_| {
                        let cy: f64 = rng.random_range(0.0..r);
                        let cx: f64 = rng.random_range(0.0..r);
                        let sd: f64 = rng.random_range(r / 8.0..r / 4.0);
                        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                        (cy, cx, sd, color)
                    })
                    .collect();
                for c in 0..3 {
                    for y in 0..resolution {
                        for x in 0..resolution {
                            let mut v = -1.0;
                            for (cy, cx, sd, color) in &params {
                                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                                v += 2.0 * color[c] * (-d2 / (2.0 * sd * sd)).exp();
                            }
                            img[c * plane + y * resolution + x] = v.clamp(-1.0, 1.0) as f32;
                        }
                    }
                }
            }
        }
    }
    ImageBatch::new(Tensor::new(&[n, 3, resolution, resolution], data)?, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        for kind in [SyntheticKind::TwoMode, SyntheticKind::Checkerboard, SyntheticKind::GaussianBlobs] {
            let a = make_synthetic(kind, 5, 8, 11).unwrap();
            let b = make_synthetic(kind, 5, 8, 11).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, make_synthetic(kind, 5, 8, 12).unwrap());
            assert!(a.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn two_mode_split_is_balanced() {
        let b = make_synthetic(SyntheticKind::TwoMode, 100, 8, 3).unwrap();
        let per = 3 * 64;
        let mut pos = 0;
        for img in b.images.data().chunks_exact(per) {
            let m: f32 = img.iter().sum::<f32>() / per as f32;
            assert!((m.abs() - 0.5).abs() < 0.05, "mean {m}");
            if m > 0.0 {
                pos += 1;
            }
        }
        assert!((45..=55).contains(&pos), "{pos} positive images");
    }

    #[test]
    fn unsupported_resolution() {
        assert!(matches!(make_synthetic(SyntheticKind::TwoMode, 4, 12, 0), Err(Error::Config(_))));
        assert!(make_synthetic(SyntheticKind::TwoMode, 0, 8, 0).is_err());
        assert!("spirals".parse::<SyntheticKind>().is_err());
    }
}
