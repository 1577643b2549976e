use super::kernels::{self, ConvGeom};
use super::{check_finite, lit, Real, Tensor};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
    /// Leaky ReLU with negative slope 0.2.
    LeakyRelu,
}

const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Gelu => kernels::gelu(x),
            Activation::Tanh => x.tanh(),
            Activation::LeakyRelu => {
                if x > T::zero() {
                    x
                } else {
                    x * lit(LEAKY_SLOPE)
                }
            }
        }
    }

    /// Derivative given the input `x` and output `y`.
    fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => kernels::gelu_grad(x),
            Activation::Tanh => T::one() - y * y,
            Activation::LeakyRelu => {
                if x > T::zero() {
                    T::one()
                } else {
                    lit(LEAKY_SLOPE)
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    /// Right operand's shape is a trailing suffix of the left operand's.
    AddBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SumLast(Var, usize),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Reshape(Var),
    /// Output element `i` is input element `index[i]`.
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
        d: usize,
    },
    Softmax(Var, usize),
    Act(Var, Activation),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    AvgPool {
        x: Var,
        planes: usize,
        h: usize,
        w: usize,
        k: usize,
    },
    SpectralDivide {
        w: Var,
        u: Vec<T>,
        v: Vec<T>,
        sigma: T,
        rows: usize,
        cols: usize,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::AddBroadcast(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::MatMul { a, b, .. } | Op::BatchMatMul { a, b, .. } => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a, _)
            | Op::Reshape(a)
            | Op::Softmax(a, _)
            | Op::Act(a, _) => vec![*a],
            Op::Gather { src, .. } => vec![*src],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::AvgPool { x, .. } => vec![*x],
            Op::SpectralDivide { w, .. } => vec![*w],
        }
    }
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of operations recorded in topological order.
///
/// Parameters bound with [`Graph::param`] are keyed by the identity of the
/// source [`Tensor`], so binding the same tensor twice yields the same
/// [`Var`] and gradients from every use accumulate into one buffer.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<u64, Var>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        check_finite(&value, name)?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { shape, value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { shape: t.shape().to_vec(), value: t.data().to_vec(), op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant (never differentiated).
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    /// Records a leaf honoring `t.requires_grad`, deduplicated by tensor identity.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.bind(t, t.requires_grad)
    }

    /// Like [`Graph::param`] with an explicit trainable flag.
    pub fn bind(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        if let Some(&v) = self.params.get(&t.key()) {
            return v;
        }
        let v = self.leaf(t, requires_grad);
        self.params.insert(t.key(), v);
        v
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape is consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!("add: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push(self.shape(a).to_vec(), value, Op::Add(a, b), "add")
    }

    /// `a + b` where `b`'s shape matches the trailing axes of `a`.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(format!("add_broadcast: {sb:?} is not a suffix of {sa:?}")));
        }
        let bv = self.value(b);
        let value =
            self.value(a).chunks_exact(bv.len()).flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y)).collect();
        self.push(sa.to_vec(), value, Op::AddBroadcast(a, b), "add_broadcast")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!("mul: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push(self.shape(a).to_vec(), value, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| x * s).collect();
        self.push(self.shape(a).to_vec(), value, Op::Scale(a, s), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| x + s).collect();
        self.push(self.shape(a).to_vec(), value, Op::AddScalar(a), "add_scalar")
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| kind.apply(x)).collect();
        self.push(self.shape(a).to_vec(), value, Op::Act(a, kind), "activation")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Gelu)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    // ---- reductions --------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = lit::<T>(self.value(a).len() as f64);
        let s = self.value(a).iter().copied().sum::<T>() / n;
        self.push(vec![1], vec![s], Op::Mean(a), "mean")
    }

    /// Sums over the last axis, dropping it (a rank-1 input yields shape `[1]`).
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let d = *shape.last().expect("non-empty shape");
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let value = self.value(a).chunks_exact(d).map(|r| r.iter().copied().sum()).collect();
        self.push(out_shape, value, Op::SumLast(a, d), "sum_last")
    }

    // ---- linear algebra ----------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: {sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = kernels::matmul(self.value(a), self.value(b), m, k, n);
        self.push(vec![m, n], value, Op::MatMul { a, b, m, k, n }, "matmul")
    }

    /// `[B×m×k] · [B×k×n] → [B×m×n]`
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::dim(format!("batch_matmul: {sa:?} · {sb:?}")));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = vec![T::zero(); batch * m * n];
        for i in 0..batch {
            kernels::mm_acc(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * k * n..(i + 1) * k * n],
                &mut value[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.push(vec![batch, m, n], value, Op::BatchMatMul { a, b, batch, m, k, n }, "batch_matmul")
    }

    // ---- shape ---------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() || shape.contains(&0) {
            return Err(Error::dim(format!("reshape {:?} -> {shape:?}", self.shape(a))));
        }
        let value = self.value(a).to_vec();
        self.push(shape.to_vec(), value, Op::Reshape(a), "reshape")
    }

    fn gather(&mut self, src: Var, shape: Vec<usize>, index: Vec<usize>, name: &'static str) -> Result<Var> {
        let sv = self.value(src);
        let value = index.iter().map(|&i| sv[i]).collect();
        self.push(shape, value, Op::Gather { src, index }, name)
    }

    /// Reorders axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true))
        {
            return Err(Error::dim(format!("permute {axes:?} on rank {}", shape.len())));
        }
        let index = kernels::permute_index(&shape, axes);
        let out_shape = axes.iter().map(|&x| shape[x]).collect();
        self.gather(a, out_shape, index, "permute")
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let nd = self.shape(a).len();
        if nd < 2 {
            return Err(Error::dim("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 1, nd - 2);
        self.permute(a, &axes)
    }

    /// `N×(C·r²)×H×W → N×C×rH×rW`
    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || r == 0 || !s[1].is_multiple_of(r * r) {
            return Err(Error::dim(format!("pixel_shuffle r={r} on {s:?}")));
        }
        let c = s[1] / (r * r);
        let index = kernels::pixel_shuffle_index(s[0], c, s[2], s[3], r);
        self.gather(a, vec![s[0], c, s[2] * r, s[3] * r], index, "pixel_shuffle")
    }

    /// `N×C×rH×rW → N×(C·r²)×H×W`, the inverse of [`Graph::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || r == 0 || !s[2].is_multiple_of(r) || !s[3].is_multiple_of(r) {
            return Err(Error::dim(format!("pixel_unshuffle r={r} on {s:?}")));
        }
        let (h, w) = (s[2] / r, s[3] / r);
        let fwd = kernels::pixel_shuffle_index(s[0], s[1], h, w, r);
        let mut index = vec![0; fwd.len()];
        for (out_pos, &in_pos) in fwd.iter().enumerate() {
            index[in_pos] = out_pos;
        }
        self.gather(a, vec![s[0], s[1] * r * r, h, w], index, "pixel_unshuffle")
    }

    // ---- normalization -------------------------------------------------

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        if eps <= T::zero() {
            return Err(Error::contract("layer_norm eps must be positive"));
        }
        let d = *self.shape(x).last().expect("non-empty shape");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(format!(
                "layer_norm: affine {:?}/{:?} vs width {d}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (y, xhat, rstd) = kernels::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), d, eps);
        self.push(self.shape(x).to_vec(), y, Op::LayerNorm { x, gamma, beta, xhat, rstd, d }, "layer_norm")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let d = *self.shape(a).last().expect("non-empty shape");
        let value = kernels::softmax_rows(self.value(a), d);
        self.push(self.shape(a).to_vec(), value, Op::Softmax(a, d), "softmax")
    }

    /// Returns `W / σ̂` where `σ̂ = uᵀ W v` with `u`, `v` held constant.
    /// `w` is viewed as a `u.len() × v.len()` matrix.
    pub fn spectral_divide(&mut self, w: Var, u: &[T], v: &[T]) -> Result<Var> {
        let (rows, cols) = (u.len(), v.len());
        if rows * cols != self.value(w).len() {
            return Err(Error::dim(format!("spectral_divide: {rows}x{cols} view of {:?}", self.shape(w))));
        }
        let wv = self.value(w);
        let mut sigma = T::zero();
        for i in 0..rows {
            let mut s = T::zero();
            for j in 0..cols {
                s = s + wv[i * cols + j] * v[j];
            }
            sigma = sigma + u[i] * s;
        }
        if sigma <= T::zero() {
            return Err(Error::contract("spectral_divide: non-positive singular value estimate"));
        }
        let value = wv.iter().map(|&x| x / sigma).collect();
        let op = Op::SpectralDivide { w, u: u.to_vec(), v: v.to_vec(), sigma, rows, cols };
        self.push(self.shape(w).to_vec(), value, op, "spectral_divide")
    }

    // ---- convolution ---------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::dim(format!("conv2d: input {sx:?}, kernel {sw:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::dim(format!("conv2d: bias {:?} for {} outputs", self.shape(b), sw[0])));
            }
        }
        let geom =
            ConvGeom::new(sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], stride, padding).ok_or_else(|| {
                Error::dim(format!("conv2d: kernel {sw:?} stride {stride} pad {padding} does not tile input {sx:?}"))
            })?;
        let value = kernels::conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), &geom);
        self.push(vec![geom.n, geom.o, geom.oh, geom.ow], value, Op::Conv2d { x, w, b, geom }, "conv2d")
    }

    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || !s[2].is_multiple_of(k) || !s[3].is_multiple_of(k) {
            return Err(Error::dim(format!("avg_pool2d k={k} on {s:?}")));
        }
        let planes = s[0] * s[1];
        let value = kernels::avg_pool2d_forward(self.value(x), planes, s[2], s[3], k);
        let op = Op::AvgPool { x, planes, h: s[2], w: s[3], k };
        self.push(vec![s[0], s[1], s[2] / k, s[3] / k], value, op, "avg_pool2d")
    }

    // ---- differentiation -----------------------------------------------

    /// Reverse pass from a scalar `loss`. Any earlier gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last backward pass w.r.t. `v`; zeros if `v` was not on a path to the loss.
    pub fn grad(&self, v: Var) -> Vec<T> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) if self.nodes[v.0].requires_grad => g.clone(),
            _ => vec![T::zero(); self.nodes[v.0].value.len()],
        }
    }

    /// Gradient for a tensor previously bound with [`Graph::param`]/[`Graph::bind`].
    pub fn grad_of(&self, t: &Tensor<T>) -> Option<Vec<T>> {
        self.params.get(&t.key()).map(|&v| self.grad(v))
    }

    /// Writes the last backward pass's gradient into `t.grad` (zeros if unbound).
    pub fn store_grad(&self, t: &mut Tensor<T>) {
        t.grad = Some(self.grad_of(t).unwrap_or_else(|| vec![T::zero(); t.len()]));
    }

    fn backprop_node(&self, id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| add_into(gb, g));
            }
            Op::AddBroadcast(a, b) => {
                self.acc(grads, *a, |ga| add_into(ga, g));
                self.acc(grads, *b, |gb| {
                    for row in g.chunks_exact(gb.len()) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] * bv[i];
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] = gb[i] + g[i] * av[i];
                    }
                });
            }
            Op::Scale(a, s) => self.acc(grads, *a, |ga| {
                for (x, &gi) in ga.iter_mut().zip(g) {
                    *x = *x + gi * *s;
                }
            }),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, |ga| add_into(ga, g)),
            Op::Sum(a) => self.acc(grads, *a, |ga| ga.iter_mut().for_each(|x| *x = *x + g[0])),
            Op::Mean(a) => {
                let n = lit::<T>(self.value(*a).len() as f64);
                self.acc(grads, *a, |ga| ga.iter_mut().for_each(|x| *x = *x + g[0] / n))
            }
            Op::SumLast(a, d) => self.acc(grads, *a, |ga| {
                for (row, &gi) in ga.chunks_exact_mut(*d).zip(g) {
                    row.iter_mut().for_each(|x| *x = *x + gi);
                }
            }),
            Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |ga| kernels::mm_nt_acc(g, bv, ga, *m, *n, *k));
                self.acc(grads, *b, |gb| kernels::mm_tn_acc(av, g, gb, *k, *m, *n));
            }
            Op::BatchMatMul { a, b, batch, m, k, n } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (sa, sb, so) = (m * k, k * n, m * n);
                self.acc(grads, *a, |ga| {
                    for i in 0..*batch {
                        kernels::mm_nt_acc(
                            &g[i * so..(i + 1) * so],
                            &bv[i * sb..(i + 1) * sb],
                            &mut ga[i * sa..(i + 1) * sa],
                            *m,
                            *n,
                            *k,
                        );
                    }
                });
                self.acc(grads, *b, |gb| {
                    for i in 0..*batch {
                        kernels::mm_tn_acc(
                            &av[i * sa..(i + 1) * sa],
                            &g[i * so..(i + 1) * so],
                            &mut gb[i * sb..(i + 1) * sb],
                            *k,
                            *m,
                            *n,
                        );
                    }
                });
            }
            Op::Gather { src, index } => self.acc(grads, *src, |gs| {
                for (&i, &gi) in index.iter().zip(g) {
                    gs[i] = gs[i] + gi;
                }
            }),
            Op::LayerNorm { x, gamma, beta, xhat, rstd, d } => {
                let d = *d;
                let gv = self.value(*gamma);
                self.acc(grads, *gamma, |gg| {
                    for (grow, xrow) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] = gg[j] + grow[j] * xrow[j];
                        }
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for grow in g.chunks_exact(d) {
                        add_into(gb, grow);
                    }
                });
                self.acc(grads, *x, |gx| {
                    let dn = lit::<T>(d as f64);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let grow = &g[r * d..(r + 1) * d];
                        let xrow = &xhat[r * d..(r + 1) * d];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let gh = grow[j] * gv[j];
                            m1 = m1 + gh;
                            m2 = m2 + gh * xrow[j];
                        }
                        m1 = m1 / dn;
                        m2 = m2 / dn;
                        for j in 0..d {
                            let gh = grow[j] * gv[j];
                            gx[r * d + j] = gx[r * d + j] + rs * (gh - m1 - xrow[j] * m2);
                        }
                    }
                });
            }
            Op::Softmax(a, d) => {
                let y = &node.value;
                self.acc(grads, *a, |ga| {
                    for ((grow, yrow), garow) in g.chunks_exact(*d).zip(y.chunks_exact(*d)).zip(ga.chunks_exact_mut(*d))
                    {
                        let dot: T = grow.iter().zip(yrow).map(|(&gi, &yi)| gi * yi).sum();
                        for j in 0..*d {
                            garow[j] = garow[j] + yrow[j] * (grow[j] - dot);
                        }
                    }
                });
            }
            Op::Act(a, kind) => {
                let xv = self.value(*a);
                let y = &node.value;
                self.acc(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] = ga[i] + g[i] * kind.derivative(xv[i], y[i]);
                    }
                });
            }
            Op::Conv2d { x, w, b, geom } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let mut gx = self.wants(*x).then(|| vec![T::zero(); xv.len()]);
                let mut gw = self.wants(*w).then(|| vec![T::zero(); wv.len()]);
                let mut gb = b.filter(|b| self.wants(*b)).map(|_| vec![T::zero(); geom.o]);
                kernels::conv2d_backward(xv, wv, g, geom, gx.as_deref_mut(), gw.as_deref_mut(), gb.as_deref_mut());
                if let Some(gx) = gx {
                    self.acc(grads, *x, |t| add_into(t, &gx));
                }
                if let Some(gw) = gw {
                    self.acc(grads, *w, |t| add_into(t, &gw));
                }
                if let (Some(b), Some(gb)) = (b, gb) {
                    self.acc(grads, *b, |t| add_into(t, &gb));
                }
            }
            Op::AvgPool { x, planes, h, w, k } => {
                self.acc(grads, *x, |gx| kernels::avg_pool2d_backward(g, gx, *planes, *h, *w, *k))
            }
            Op::SpectralDivide { w, u, v, sigma, rows, cols } => {
                // d(W/σ) with σ = uᵀWv: g/σ − (⟨g, W⟩/σ²) u vᵀ
                let wv = self.value(*w);
                let inner: T = g.iter().zip(wv).map(|(&a, &b)| a * b).sum();
                let coef = inner / (*sigma * *sigma);
                self.acc(grads, *w, |gw| {
                    for i in 0..*rows {
                        for j in 0..*cols {
                            let idx = i * cols + j;
                            gw[idx] = gw[idx] + g[idx] / *sigma - coef * u[i] * v[j];
                        }
                    }
                });
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(buf);
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
