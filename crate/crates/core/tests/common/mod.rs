//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use hgan::nn::Params;
use hgan::{Graph, Result, Tensor, Var};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Relative error with a small floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Contracts `out` with fixed pseudo-random weights to get a scalar.
fn project(g: &mut Graph<f64>, out: Var) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let mut r = rng(0xF00D);
    let w = g.constant(&uniform(&mut r, &shape, -1.0, 1.0));
    let p = g.mul(out, w)?;
    g.sum(p)
}

/// Largest relative error between the tape gradient of `Σ R⊙f(inputs)` and
/// central differences, over every element of every input.
pub fn check_op(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> f64 {
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t)).collect();
        let out = f(&mut g, &vars).unwrap();
        let l = project(&mut g, out).unwrap();
        g.value(l)[0]
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(&t.clone().with_grad())).collect();
    let out = f(&mut g, &vars).unwrap();
    let l = project(&mut g, out).unwrap();
    g.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = g.grad(v);
        #[allow(clippy::needless_range_loop)]
        for i in 0..xs[k].len() {
            let x0 = xs[k].data()[i];
            xs[k].data_mut()[i] = x0 + FD_STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] = x0 - FD_STEP;
            let down = eval(&xs);
            xs[k].data_mut()[i] = x0;
            worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

fn set_element<P: Params<f64>>(model: &mut P, tensor: usize, index: usize, value: f64) {
    let mut k = 0;
    model.visit_mut("", &mut |_, t| {
        if k == tensor {
            t.data_mut()[index] = value;
        }
        k += 1;
    });
}

/// Same as [`check_op`] for every parameter of a model; `forward` builds the
/// network output on a fresh graph with parameters trainable.
pub fn check_model<P: Params<f64> + Clone>(model: &P, forward: impl Fn(&P, &mut Graph<f64>) -> Result<Var>) -> f64 {
    let eval = |m: &P| -> f64 {
        let mut g = Graph::new();
        let out = forward(m, &mut g).unwrap();
        let l = project(&mut g, out).unwrap();
        g.value(l)[0]
    };
    let mut m = model.clone();
    let mut g = Graph::new();
    let out = forward(&m, &mut g).unwrap();
    let l = project(&mut g, out).unwrap();
    g.backward(l).unwrap();
    m.store_grads(&g);
    let grads: Vec<Vec<f64>> = m.named().iter().map(|(_, t)| t.grad.clone().unwrap()).collect();
    let values: Vec<Vec<f64>> = m.named().iter().map(|(_, t)| t.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (k, vals) in values.iter().enumerate() {
        for (i, &x0) in vals.iter().enumerate() {
            set_element(&mut m, k, i, x0 + FD_STEP);
            let up = eval(&m);
            set_element(&mut m, k, i, x0 - FD_STEP);
            let down = eval(&m);
            set_element(&mut m, k, i, x0);
            worst = worst.max(rel_err(grads[k][i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Direct nested-loop 2-D convolution (zero padding, NCHW / OCKK).
pub fn conv2d_direct(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * o * ho * wo];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let iy = (y * stride + ki) as isize - pad as isize;
                                let ix = (xo * stride + kj) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                s += xv * w.data()[((oi * c + ci) * k + ki) * k + kj];
                            }
                        }
                    }
                    if let Some(b) = b {
                        s += b[oi];
                    }
                    out[((ni * o + oi) * ho + y) * wo + xo] = s;
                }
            }
        }
    }
    Tensor::new(&[n, o, ho, wo], out).unwrap()
}

/// Centered power spectrum by the textbook O(R⁴) DFT.
pub fn dft_power(image: &[f64], r: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * r];
    let tau = 2.0 * std::f64::consts::PI;
    for ky in 0..r {
        for kx in 0..r {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..r {
                for x in 0..r {
                    let phase = tau * (((ky * y) % r) as f64 / r as f64 + ((kx * x) % r) as f64 / r as f64);
                    let v = image[y * r + x];
                    re += v * phase.cos();
                    im -= v * phase.sin();
                }
            }
            let cy = (ky + r / 2) % r;
            let cx = (kx + r / 2) % r;
            out[cy * r + cx] = re * re + im * im;
        }
    }
    out
}

/// Ring sums with radius `round(√(dy²+dx²))` computed in floating point,
/// clamped to `floor(√2·R/2)`.
pub fn radial_profile_loop(ps: &[f64], r: usize, normalize: bool) -> Vec<f64> {
    let kmax = (std::f64::consts::SQRT_2 * r as f64 / 2.0).floor() as usize;
    let c = (r / 2) as f64;
    let mut bins = vec![0.0; kmax + 1];
    for y in 0..r {
        for x in 0..r {
            let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt().round() as usize;
            bins[d.min(kmax)] += ps[y * r + x];
        }
    }
    if normalize && bins[0] != 0.0 {
        let dc = bins[0];
        bins.iter_mut().for_each(|b| *b /= dc);
    }
    bins
}

/// Top singular value by dense SVD.
pub fn top_singular_value(w: &[f64], rows: usize, cols: usize) -> f64 {
    let m = DMatrix::from_row_slice(rows, cols, w);
    m.singular_values().max()
}

/// Finite-difference checks of every differentiable op plus one full
/// generator and one full discriminator; returns `(name, max relative error)`.
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    use hgan::discriminator::{init_discriminator, DiscriminatorSpec};
    use hgan::generator::{init_generator, GeneratorSpec};
    use hgan::tensor::Activation;

    let mut r = rng(11);
    let mut u = |shape: &[usize]| uniform(&mut r, shape, -1.0, 1.0);
    let mut out = Vec::new();
    let a = u(&[3, 4]);
    let b = u(&[3, 4]);
    out.push(("add", check_op(&[a.clone(), b.clone()], |g, v| g.add(v[0], v[1]))));
    out.push(("add_broadcast", check_op(&[u(&[2, 3, 4]), u(&[4])], |g, v| g.add_broadcast(v[0], v[1]))));
    out.push(("mul", check_op(&[a.clone(), b.clone()], |g, v| g.mul(v[0], v[1]))));
    out.push(("scale", check_op(std::slice::from_ref(&a), |g, v| g.scale(v[0], -1.7))));
    out.push(("add_scalar", check_op(std::slice::from_ref(&a), |g, v| g.add_scalar(v[0], 0.3))));
    for (name, act) in [
        ("relu", Activation::Relu),
        ("gelu", Activation::Gelu),
        ("tanh", Activation::Tanh),
        ("leaky_relu", Activation::LeakyRelu),
    ] {
        out.push((name, check_op(std::slice::from_ref(&a), move |g, v| g.activation(v[0], act))));
    }
    out.push(("sum", check_op(std::slice::from_ref(&a), |g, v| g.sum(v[0]))));
    out.push(("mean", check_op(std::slice::from_ref(&a), |g, v| g.mean(v[0]))));
    out.push(("sum_last", check_op(&[u(&[2, 3, 4])], |g, v| g.sum_last(v[0]))));
    out.push(("matmul", check_op(&[u(&[3, 5]), u(&[5, 2])], |g, v| g.matmul(v[0], v[1]))));
    out.push(("batch_matmul", check_op(&[u(&[2, 3, 4]), u(&[2, 4, 3])], |g, v| g.batch_matmul(v[0], v[1]))));
    out.push(("reshape", check_op(&[u(&[2, 6])], |g, v| g.reshape(v[0], &[3, 4]))));
    out.push(("permute", check_op(&[u(&[2, 3, 4])], |g, v| g.permute(v[0], &[2, 0, 1]))));
    out.push(("transpose", check_op(&[u(&[2, 3, 4])], |g, v| g.transpose(v[0]))));
    out.push(("pixel_shuffle", check_op(&[u(&[2, 8, 2, 3])], |g, v| g.pixel_shuffle(v[0], 2))));
    out.push(("pixel_unshuffle", check_op(&[u(&[1, 2, 4, 6])], |g, v| g.pixel_unshuffle(v[0], 2))));
    out.push(("layer_norm", check_op(&[u(&[2, 3, 6]), u(&[6]), u(&[6])], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5))));
    out.push(("softmax", check_op(&[u(&[2, 3, 5])], |g, v| g.softmax(v[0]))));
    let w = u(&[4, 6]);
    let (uu, vv) = {
        let mut r2 = rng(12);
        let uu: Vec<f64> = (0..4).map(|_| r2.random_range(0.1..1.0)).collect();
        let vv: Vec<f64> = (0..6).map(|_| r2.random_range(0.1..1.0)).collect();
        (uu, vv)
    };
    let wpos = Tensor::from_fn(&[4, 6], |i| w.data()[i].abs() + 0.1);
    out.push(("spectral_divide", check_op(&[wpos], move |g, v| g.spectral_divide(v[0], &uu, &vv))));
    let x = u(&[2, 3, 5, 5]);
    let k = u(&[4, 3, 3, 3]);
    let bias = u(&[4]);
    out.push((
        "conv2d",
        check_op(&[x.clone(), k.clone(), bias.clone()], |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, 1)),
    ));
    out.push((
        "conv2d_strided",
        check_op(&[u(&[1, 2, 6, 6]), u(&[3, 2, 4, 4])], |g, v| g.conv2d(v[0], v[1], None, 2, 1)),
    ));
    out.push(("avg_pool2d", check_op(&[u(&[2, 3, 4, 6])], |g, v| g.avg_pool2d(v[0], 2))));

    let gspec = GeneratorSpec {
        latent_dim: 8,
        base_grid: 2,
        embed_dim: 16,
        depths: vec![1, 1],
        heads: 2,
        mlp_ratio: 2.0,
        out_channels: 3,
    };
    let gen = init_generator::<f64>(&gspec, 3).unwrap();
    let z = uniform(&mut rng(13), &[2, 8], -1.0, 1.0);
    out.push((
        "generator",
        check_model(&gen, |m, g| {
            let zv = g.constant(&z);
            m.forward(g, zv, true)
        }),
    ));
    out.push(("generator_latents", check_op(std::slice::from_ref(&z), |g, v| gen.forward(g, v[0], false))));

    let mut dspec = DiscriminatorSpec::preset("sngan", 8).unwrap();
    dspec.base_width = 6;
    let mut disc = init_discriminator::<f64>(&dspec, 4).unwrap();
    disc.power_iterate(3);
    let imgs = uniform(&mut rng(14), &[2, 3, 8, 8], -1.0, 1.0);
    out.push((
        "discriminator",
        check_model(&disc, |m, g| {
            let x = g.constant(&imgs);
            m.forward(g, x, true)
        }),
    ));
    out.push(("discriminator_images", check_op(std::slice::from_ref(&imgs), |g, v| disc.forward(g, v[0], false))));
    let dc = init_discriminator::<f64>(&DiscriminatorSpec::preset("dcgan", 8).unwrap(), 5).unwrap();
    out.push((
        "dcgan_discriminator",
        check_model(&dc, |m, g| {
            let x = g.constant(&imgs);
            m.forward(g, x, true)
        }),
    ));
    out
}
