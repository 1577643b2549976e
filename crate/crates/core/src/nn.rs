//! Parameter containers shared by the generator and discriminator.

use crate::error::Result;
use crate::tensor::{lit, Graph, Real, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

/// Anything that owns named parameter tensors.
///
/// Both visitors must walk tensors in the same order; optimizer state and
/// checkpoints rely on it.
pub trait Params<T: Real> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>));

    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n, t)));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    /// Copies gradients of the last backward pass of `g` into each tensor's `grad`.
    fn store_grads(&mut self, g: &Graph<T>) {
        self.visit_mut("", &mut |_, t| g.store_grad(t));
    }

    /// Euclidean norm over all stored gradients.
    fn grad_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit("", &mut |_, t| {
            if let Some(g) = &t.grad {
                s += g.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
            }
        });
        s.sqrt()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Normal sample truncated to ±2 standard deviations.
pub fn truncated_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            break lit(z * std);
        }
    })
}

pub fn normal<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| lit(rng.sample::<f64, _>(StandardNormal) * std))
}

/// Affine map `x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, std: f64) -> Self {
        Self {
            weight: truncated_normal(rng, &[fan_in, fan_out], std).with_grad(),
            bias: Tensor::zeros(&[fan_out]).with_grad(),
        }
    }

    pub fn count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Applies the map to the last axis of `x`, whatever its rank.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let d = *shape.last().expect("non-empty shape");
        let rows = shape.iter().product::<usize>() / d;
        let w = g.bind(&self.weight, trainable);
        let b = g.bind(&self.bias, trainable);
        let flat = if shape.len() == 2 { x } else { g.reshape(x, &[rows, d])? };
        let y = g.matmul(flat, w)?;
        let y = g.add_broadcast(y, b)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim();
        g.reshape(y, &out_shape)
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Real> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        Self { gamma: Tensor::ones(&[d]).with_grad(), beta: Tensor::zeros(&[d]).with_grad() }
    }

    pub fn forward(&self, g: &mut Graph<T>, x: Var, trainable: bool) -> Result<Var> {
        let gamma = g.bind(&self.gamma, trainable);
        let beta = g.bind(&self.beta, trainable);
        g.layer_norm(x, gamma, beta, lit(LAYER_NORM_EPS))
    }
}

impl<T: Real> Params<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_four_to_three_has_fifteen_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::<f64>::init(&mut rng, 4, 3, 0.02);
        assert_eq!(l.param_count(), 15);
        assert_eq!(Linear::<f64>::count(4, 3), 15);
    }

    #[test]
    fn truncated_normal_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = truncated_normal(&mut rng, &[1000], 0.5);
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn linear_forward_on_rank3_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::<f64>::init(&mut rng, 4, 2, 1.0);
        let x = Tensor::from_fn(&[2, 3, 4], |i| i as f64 * 0.1);
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let y = l.forward(&mut g, xv, true).unwrap();
        assert_eq!(g.shape(y), &[2, 3, 2]);
        let w = l.weight.data();
        let row = &x.data()[4..8];
        let expect: f64 = (0..4).map(|p| row[p] * w[p * 2 + 1]).sum();
        assert!((g.value(y)[3] - expect).abs() < 1e-12);
    }
}
