use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Var};

/// `mean(max(0, 1 − real)) + mean(max(0, 1 + fake))`
pub fn hinge_d_loss<T: Real>(g: &mut Graph<T>, real: Var, fake: Var) -> Result<Var> {
    if g.shape(real) != g.shape(fake) {
        return Err(Error::dim(format!("hinge_d_loss: real {:?} vs fake {:?}", g.shape(real), g.shape(fake))));
    }
    let r = g.scale(real, -T::one())?;
    let r = g.add_scalar(r, T::one())?;
    let r = g.relu(r)?;
    let r = g.mean(r)?;
    let f = g.add_scalar(fake, T::one())?;
    let f = g.relu(f)?;
    let f = g.mean(f)?;
    g.add(r, f)
}

/// `−mean(fake)`
pub fn hinge_g_loss<T: Real>(g: &mut Graph<T>, fake: Var) -> Result<Var> {
    let m = g.mean(fake)?;
    g.scale(m, -T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn d_loss(real: &[f64], fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let r = g.param(&Tensor::new(&[real.len()], real.to_vec()).unwrap().with_grad());
        let f = g.param(&Tensor::new(&[fake.len()], fake.to_vec()).unwrap().with_grad());
        let l = hinge_d_loss(&mut g, r, f).unwrap();
        g.backward(l).unwrap();
        (g.value(l)[0], g.grad(r), g.grad(f))
    }

    #[test]
    fn margins_satisfied() {
        assert_eq!(d_loss(&[2.0], &[-2.0]).0, 0.0);
        assert_eq!(d_loss(&[0.0], &[0.0]).0, 2.0);
    }

    #[test]
    fn flat_region_has_zero_gradient() {
        let (_, gr, gf) = d_loss(&[1.5, 0.5], &[-1.5, 0.0]);
        assert_eq!(gr[0], 0.0);
        assert_eq!(gf[0], 0.0);
        assert_eq!(gr[1], -0.5);
        assert_eq!(gf[1], 0.5);
    }

    #[test]
    fn length_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&Tensor::zeros(&[2]));
        let b = g.constant(&Tensor::zeros(&[3]));
        assert!(hinge_d_loss(&mut g, a, b).is_err());
    }

    #[test]
    fn generator_loss() {
        let eval = |v: &[f64]| {
            let mut g = Graph::new();
            let f = g.constant(&Tensor::new(&[v.len()], v.to_vec()).unwrap());
            let l = hinge_g_loss(&mut g, f).unwrap();
            g.value(l)[0]
        };
        assert_eq!(eval(&[2.0, 2.0]), -2.0);
        assert_eq!(eval(&[0.0, 0.0]), 0.0);
        let x = [0.3, -1.2, 4.0];
        let scaled: Vec<f64> = x.iter().map(|v| v * 2.5).collect();
        assert!((eval(&scaled) - 2.5 * eval(&x)).abs() < 1e-12);
    }
}
