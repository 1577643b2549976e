use crate::nn::Params;
use crate::tensor::{lit, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments for every tensor of one parameter set, in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new<P: Params<T>>(params: &P) -> Self {
        let zeros: Vec<Tensor<T>> = params.named().iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self { t: 0, m: zeros.clone(), v: zeros }
    }
}

/// One bias-corrected Adam update of a flat buffer at step `t ≥ 1`.
pub fn adam_update<T: Real>(param: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, hp: &AdamHyper) {
    let (b1, b2) = (lit::<T>(hp.beta1), lit::<T>(hp.beta2));
    let one = T::one();
    let bc1 = one - b1.powi(t as i32);
    let bc2 = one - b2.powi(t as i32);
    let (lr, eps) = (lit::<T>(hp.lr), lit::<T>(hp.eps));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one Adam step to every tensor of `params` using its stored `grad`
/// (missing gradients count as zero). Gradients are consumed.
pub fn adam_step<T: Real, P: Params<T>>(params: &mut P, state: &mut AdamState<T>, hp: &AdamHyper) {
    state.t += 1;
    let t = state.t;
    let mut i = 0;
    let (ms, vs) = (&mut state.m, &mut state.v);
    params.visit_mut("", &mut |_, p| {
        let grad = p.grad.take().unwrap_or_else(|| vec![T::zero(); p.len()]);
        adam_update(p.data_mut(), &grad, ms[i].data_mut(), vs[i].data_mut(), t, hp);
        i += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    const HP: AdamHyper = AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 };

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = [0.7f64, -0.2];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 1, &HP);
        assert_eq!(p, [0.7, -0.2]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = [0.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        adam_update(&mut p, &[1.0], &mut m, &mut v, 1, &HP);
        assert!((p[0] - (-1e-3 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn three_steps_match_recurrence() {
        // hand-unrolled recurrence, independent of the loop above
        let (b1, b2, lr, eps): (f64, f64, f64, f64) = (0.9, 0.999, 1e-3, 1e-8);
        let m1 = (1.0 - b1) * 1.0;
        let v1 = (1.0 - b2) * 1.0 * 1.0;
        let p1 = 0.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * 1.0;
        let v2 = b2 * v1 + (1.0 - b2) * 1.0 * 1.0;
        let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        let m3 = b1 * m2 + (1.0 - b1) * 1.0;
        let v3 = b2 * v2 + (1.0 - b2) * 1.0 * 1.0;
        let p3 = p2 - lr * (m3 / (1.0 - b1 * b1 * b1)) / ((v3 / (1.0 - b2 * b2 * b2)).sqrt() + eps);

        let mut p = [0.0f64];
        let (mut m, mut v) = ([0.0], [0.0]);
        let mut trace = vec![];
        for t in 1..=3 {
            adam_update(&mut p, &[1.0], &mut m, &mut v, t, &HP);
            trace.push(p[0]);
        }
        assert_eq!(trace, vec![p1, p2, p3]);
    }
}
