//! Slice-level numeric kernels behind the graph operations.
//!
//! All kernels work on row-major buffers and accumulate in a fixed order,
//! so results are reproducible for identical inputs.

use super::{lit, Real};

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn mm_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn mm_nt_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                s = s + x * y;
            }
            out[i * n + j] = out[i * n + j] + s;
        }
    }
}

/// `out[m×n] += a[k×m]ᵀ · b[k×n]`
pub fn mm_tn_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == T::zero() {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    mm_acc(a, b, &mut out, m, k, n);
    out
}

/// Geometry of a 2-D convolution over an `N×C×H×W` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Returns `None` when the output extent is not integral or empty.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        c: usize,
        h: usize,
        w: usize,
        o: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        if stride == 0 || kh > h + 2 * pad || kw > w + 2 * pad {
            return None;
        }
        let (sh, sw) = (h + 2 * pad - kh, w + 2 * pad - kw);
        if sh % stride != 0 || sw % stride != 0 {
            return None;
        }
        Some(Self { n, c, h, w, o, kh, kw, stride, pad, oh: sh / stride + 1, ow: sw / stride + 1 })
    }

    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && (iy as usize) < g.h && ix >= 0 && (ix as usize) < g.w {
                            x[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im_acc<T: Real>(cols: &[T], g: &ConvGeom, gx: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix < 0 || ix as usize >= g.w {
                            continue;
                        }
                        let idx = (c * g.h + iy as usize) * g.w + ix as usize;
                        gx[idx] = gx[idx] + src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

/// Cross-correlation, optional per-output-channel bias added after the sum.
pub fn conv2d_forward<T: Real>(x: &[T], k: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (q, p) = (g.patch(), g.positions());
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.o * p;
    let mut out = vec![T::zero(); g.n * out_sz];
    let mut cols = vec![T::zero(); q * p];
    for n in 0..g.n {
        im2col(&x[n * in_sz..(n + 1) * in_sz], g, &mut cols);
        let dst = &mut out[n * out_sz..(n + 1) * out_sz];
        mm_acc(k, &cols, dst, g.o, q, p);
        if let Some(b) = bias {
            for (o, &bv) in b.iter().enumerate() {
                for v in &mut dst[o * p..(o + 1) * p] {
                    *v = *v + bv;
                }
            }
        }
    }
    out
}

/// Accumulates input, kernel and bias gradients of [`conv2d_forward`].
pub fn conv2d_backward<T: Real>(
    x: &[T],
    k: &[T],
    gout: &[T],
    g: &ConvGeom,
    mut gx: Option<&mut [T]>,
    mut gk: Option<&mut [T]>,
    mut gb: Option<&mut [T]>,
) {
    let (q, p) = (g.patch(), g.positions());
    let in_sz = g.c * g.h * g.w;
    let out_sz = g.o * p;
    let mut cols = vec![T::zero(); q * p];
    let mut gcols = vec![T::zero(); q * p];
    for n in 0..g.n {
        let go = &gout[n * out_sz..(n + 1) * out_sz];
        if let Some(gk) = gk.as_deref_mut() {
            im2col(&x[n * in_sz..(n + 1) * in_sz], g, &mut cols);
            mm_nt_acc(go, &cols, gk, g.o, p, q);
        }
        if let Some(gx) = gx.as_deref_mut() {
            gcols.iter_mut().for_each(|v| *v = T::zero());
            mm_tn_acc(k, go, &mut gcols, q, g.o, p);
            col2im_acc(&gcols, g, &mut gx[n * in_sz..(n + 1) * in_sz]);
        }
        if let Some(gb) = gb.as_deref_mut() {
            for (o, b) in gb.iter_mut().enumerate() {
                *b = *b + go[o * p..(o + 1) * p].iter().copied().sum();
            }
        }
    }
}

pub fn avg_pool2d_forward<T: Real>(x: &[T], nc: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / lit::<T>((k * k) as f64);
    let mut out = vec![T::zero(); nc * oh * ow];
    for plane in 0..nc {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = T::zero();
                for i in 0..k {
                    for j in 0..k {
                        s = s + src[(oy * k + i) * w + ox * k + j];
                    }
                }
                out[(plane * oh + oy) * ow + ox] = s * inv;
            }
        }
    }
    out
}

pub fn avg_pool2d_backward<T: Real>(gout: &[T], gx: &mut [T], nc: usize, h: usize, w: usize, k: usize) {
    let (oh, ow) = (h / k, w / k);
    let inv = T::one() / lit::<T>((k * k) as f64);
    for plane in 0..nc {
        for y in 0..h {
            for x in 0..w {
                let g = gout[(plane * oh + y / k) * ow + x / k];
                let idx = (plane * h + y) * w + x;
                gx[idx] = gx[idx] + g * inv;
            }
        }
    }
}

/// Source index (into the `N×C·r²×H×W` input) of every output element of a
/// pixel shuffle, in output order.
pub fn pixel_shuffle_index(n: usize, c_out: usize, h: usize, w: usize, r: usize) -> Vec<usize> {
    let c_in = c_out * r * r;
    let (oh, ow) = (h * r, w * r);
    let mut idx = Vec::with_capacity(n * c_out * oh * ow);
    for b in 0..n {
        for c in 0..c_out {
            for y in 0..oh {
                for x in 0..ow {
                    let (hh, i) = (y / r, y % r);
                    let (ww, j) = (x / r, x % r);
                    let ci = c * r * r + i * r + j;
                    idx.push(((b * c_in + ci) * h + hh) * w + ww);
                }
            }
        }
    }
    idx
}

/// Source index of every output element of an axis permutation.
pub fn permute_index(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let nd = shape.len();
    let mut strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let total: usize = shape.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; nd];
    let mut src = 0usize;
    for _ in 0..total {
        idx.push(src);
        for d in (0..nd).rev() {
            counter[d] += 1;
            src += out_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= out_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    idx
}

/// Row-wise layer normalization. Returns `(y, xhat, rstd)`.
pub fn layer_norm_forward<T: Real>(x: &[T], gamma: &[T], beta: &[T], d: usize, eps: T) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / d;
    let dn = lit::<T>(d as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            y[r * d + j] = gamma[j] * xh + beta[j];
        }
    }
    (y, xhat, rstd)
}

pub fn softmax_rows<T: Real>(x: &[T], d: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let m = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in dst.iter_mut().zip(src) {
            *o = (v - m).exp();
            s = s + *o;
        }
        for o in dst.iter_mut() {
            *o = *o / s;
        }
    }
    y
}

const GELU_C: f64 = 0.044_715;

fn sqrt_2_over_pi<T: Real>() -> T {
    lit::<T>((2.0 / std::f64::consts::PI).sqrt())
}

/// Tanh approximation of GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let half = lit::<T>(0.5);
    let inner = sqrt_2_over_pi::<T>() * (x + lit::<T>(GELU_C) * x * x * x);
    half * x * (T::one() + inner.tanh())
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let half = lit::<T>(0.5);
    let c = lit::<T>(GELU_C);
    let s = sqrt_2_over_pi::<T>();
    let inner = s * (x + c * x * x * x);
    let t = inner.tanh();
    let dinner = s * (T::one() + lit::<T>(3.0) * c * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}
