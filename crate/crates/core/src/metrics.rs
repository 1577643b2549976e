//! Fréchet distance between fitted Gaussians (FID) and Inception Score.
//!
//! Features come from a pluggable [`FeatureExtractor`]. The default desk-scale
//! extractor is a fixed random-weight CNN, so the resulting "FID-proxy" is
//! only comparable to other values computed with the same extractor.

use crate::error::{Error, Result};
use crate::nn::normal;
use crate::tensor::{Graph, Tensor};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::str::FromStr;

const SYMMETRY_TOL: f64 = 1e-8;

/// Mean and covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and unbiased (n−1) covariance of the rows of `features`.
pub fn fit_gaussian(features: &DMatrix<f64>) -> Result<GaussianStats> {
    let (n, d) = features.shape();
    if n < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 feature rows, got {n}")));
    }
    let mu = DVector::from_iterator(d, (0..d).map(|j| features.column(j).sum() / n as f64));
    let mut centered = features.clone();
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mu[j]);
    }
    let mut sigma = centered.transpose() * &centered / (n - 1) as f64;
    // exact symmetry despite rounding in the product
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(GaussianStats { mu, sigma })
}

fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in i + 1..a.ncols() {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

/// Symmetric square root of a PSD matrix via eigendecomposition. Eigenvalues
/// below the numerical-rank cutoff `n·ε·λmax` are treated as zero, so rounding
/// noise in a rank-deficient covariance does not leak into traces.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::dim(format!("matrix_sqrt_psd on {:?}", a.shape())));
    }
    let scale = a.amax().max(1.0);
    let asym = max_asymmetry(a);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::contract(format!("matrix is not symmetric (max |a_ij - a_ji| = {asym:e})")));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let cutoff = a.nrows() as f64 * f64::EPSILON * eig.eigenvalues.amax();
    let roots = eig.eigenvalues.map(|l| if l > cutoff { l.sqrt() } else { 0.0 });
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&s + s.transpose()) * 0.5)
}

/// `‖μa−μb‖² + Tr(Σa + Σb − 2·(Σa^½ Σb Σa^½)^½)`
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.sigma.shape() != b.sigma.shape() {
        return Err(Error::dim(format!("Gaussian dims {} vs {}", a.dim(), b.dim())));
    }
    let diff = &a.mu - &b.mu;
    let sa_half = matrix_sqrt_psd(&a.sigma)?;
    let inner = &sa_half * &b.sigma * &sa_half;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = matrix_sqrt_psd(&inner)?;
    // Nonnegative in exact arithmetic; rounding can dip just below zero.
    Ok((diff.norm_squared() + a.sigma.trace() + b.sigma.trace() - 2.0 * cross.trace()).max(0.0))
}

/// Maps an `N×C×H×W` image batch to an `N×d` feature matrix.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, images: &Tensor<f64>) -> Result<DMatrix<f64>>;
}

/// Flattened pixels.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn name(&self) -> &str {
        "identity"
    }

    fn extract(&self, images: &Tensor<f64>) -> Result<DMatrix<f64>> {
        let n = images.shape()[0];
        let d = images.len() / n;
        Ok(DMatrix::from_row_slice(n, d, images.data()))
    }
}

/// Fixed random-weight CNN: conv3×3(C→16) → ReLU → avg-pool 2 → conv3×3(16→64)
/// → ReLU → global mean pool, giving 64 features.
#[derive(Debug, Clone)]
pub struct SmallCnnExtractor {
    conv1: Tensor<f64>,
    conv2: Tensor<f64>,
}

pub const SMALL_CNN_DIM: usize = 64;
const SMALL_CNN_SEED: u64 = 0x5EED_F1D0;

impl SmallCnnExtractor {
    pub fn new(in_channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(SMALL_CNN_SEED);
        let conv1 = normal(&mut rng, &[16, in_channels, 3, 3], (2.0 / (9 * in_channels) as f64).sqrt());
        let conv2 = normal(&mut rng, &[SMALL_CNN_DIM, 16, 3, 3], (2.0 / 144.0f64).sqrt());
        Self { conv1, conv2 }
    }
}

impl FeatureExtractor for SmallCnnExtractor {
    fn name(&self) -> &str {
        "smallcnn"
    }

    fn extract(&self, images: &Tensor<f64>) -> Result<DMatrix<f64>> {
        let s = images.shape();
        if s.len() != 4 || s[1] != self.conv1.shape()[1] {
            return Err(Error::dim(format!("smallcnn expects N×{}×H×W, got {s:?}", self.conv1.shape()[1])));
        }
        let mut g = Graph::new();
        let x = g.constant(images);
        let w1 = g.constant(&self.conv1);
        let w2 = g.constant(&self.conv2);
        let h = g.conv2d(x, w1, None, 1, 1)?;
        let h = g.relu(h)?;
        let h = if s[2].is_multiple_of(2) && s[3].is_multiple_of(2) { g.avg_pool2d(h, 2)? } else { h };
        let h = g.conv2d(h, w2, None, 1, 1)?;
        let h = g.relu(h)?;
        let hs = g.shape(h).to_vec();
        let plane = (hs[2] * hs[3]) as f64;
        let n = s[0];
        let v = g.value(h);
        Ok(DMatrix::from_fn(n, SMALL_CNN_DIM, |i, c| {
            let start = (i * SMALL_CNN_DIM + c) * hs[2] * hs[3];
            v[start..start + hs[2] * hs[3]].iter().sum::<f64>() / plane
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    Identity,
    SmallCnn,
}

impl ExtractorKind {
    pub fn build(self, in_channels: usize) -> Box<dyn FeatureExtractor> {
        match self {
            ExtractorKind::Identity => Box::new(IdentityExtractor),
            ExtractorKind::SmallCnn => Box::new(SmallCnnExtractor::new(in_channels)),
        }
    }
}

impl FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "smallcnn" => Ok(Self::SmallCnn),
            _ => Err(Error::config(format!("unknown extractor {s:?} (identity|smallcnn)"))),
        }
    }
}

impl std::fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExtractorKind::Identity => "identity",
            ExtractorKind::SmallCnn => "smallcnn",
        })
    }
}

/// FID between two image sets under `extractor`.
pub fn fid(real: &Tensor<f64>, fake: &Tensor<f64>, extractor: &dyn FeatureExtractor) -> Result<f64> {
    let a = fit_gaussian(&extractor.extract(real)?)?;
    let b = fit_gaussian(&extractor.extract(fake)?)?;
    frechet_distance(&a, &b)
}

/// Inception Score from per-image class probabilities (one row per image).
///
/// Rows are split into `n_splits` contiguous chunks; each chunk scores
/// `exp(mean_i KL(p(y|x_i) ‖ p(y)))` with its own marginal. Returns the mean
/// and population standard deviation across chunks.
pub fn inception_score_from_probs(probs: &DMatrix<f64>, n_splits: usize) -> Result<(f64, f64)> {
    let (n, c) = probs.shape();
    if n_splits == 0 || n < n_splits {
        return Err(Error::InsufficientData(format!("{n} rows for {n_splits} splits")));
    }
    for (i, row) in probs.row_iter().enumerate() {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::contract(format!("row {i} is not a probability distribution (sum {s})")));
        }
    }
    let mut scores = Vec::with_capacity(n_splits);
    for k in 0..n_splits {
        let (lo, hi) = (k * n / n_splits, (k + 1) * n / n_splits);
        let rows = (hi - lo) as f64;
        let marginal: Vec<f64> = (0..c).map(|j| probs.view((lo, j), (hi - lo, 1)).sum() / rows).collect();
        let mut kl_sum = 0.0;
        for i in lo..hi {
            for (j, &q) in marginal.iter().enumerate() {
                let p = probs[(i, j)];
                if p > 0.0 {
                    kl_sum += p * (p.ln() - q.ln());
                }
            }
        }
        scores.push((kl_sum / rows).exp());
    }
    let mean = scores.iter().sum::<f64>() / n_splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n_splits as f64;
    Ok((mean, var.sqrt()))
}

/// Inception Score of `images` under a classifier producing probability rows.
pub fn inception_score(
    images: &Tensor<f64>,
    classifier: &dyn Fn(&Tensor<f64>) -> Result<DMatrix<f64>>,
    n_splits: usize,
) -> Result<(f64, f64)> {
    inception_score_from_probs(&classifier(images)?, n_splits)
}
