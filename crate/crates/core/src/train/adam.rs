use crate::error::{shape_err, Result};
use crate::nn::{zero_like, Parameters};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moment estimates, shaped like the parameters they update.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<P> {
    pub first: P,
    pub second: P,
    pub step: u64,
}

impl<P: Parameters + Clone> OptimizerState<P> {
    pub fn new(params: &P) -> OptimizerState<P> {
        OptimizerState { first: zero_like(params), second: zero_like(params), step: 0 }
    }
}

/// One bias-corrected Adam update of `params` against `grads`.
pub fn adam_step<P: Parameters>(params: &mut P, grads: &P, opt: &mut OptimizerState<P>, lr: f64) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.tensors_mut();
    let mut m = opt.first.tensors_mut();
    let mut v = opt.second.tensors_mut();
    if g.len() != p.len() || m.len() != p.len() || v.len() != p.len() {
        return shape_err("optimizer state does not match the parameters");
    }
    if g.iter().zip(&p).zip(m.iter().zip(&v)).any(|((g, p), (m, v))| {
        g.1.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape()
    }) {
        return shape_err("gradient shapes do not match the parameters");
    }
    opt.step += 1;
    let c1 = 1.0 - BETA1.powi(opt.step as i32);
    let c2 = 1.0 - BETA2.powi(opt.step as i32);
    for (((p, (_, g)), m), v) in p.iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
        let iter = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((x, &g), (m, v)) in iter {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *x -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Matrix};

    fn layer(values: &[f64]) -> Linear {
        Linear::new(Matrix::from_vec(1, values.len(), values.to_vec()).unwrap(), vec![0.0; values.len()]).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = layer(&[0.5, -1.0]);
        let before = p.clone();
        let mut opt = OptimizerState::new(&p);
        let zero = zero_like(&p);
        adam_step(&mut p, &zero, &mut opt, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = layer(&[0.0, 0.0, 0.0]);
        let g = layer(&[3.0, -0.02, 1e3]);
        let mut opt = OptimizerState::new(&p);
        adam_step(&mut p, &g, &mut opt, 0.01).unwrap();
        let expect = [-0.01, 0.01, -0.01];
        for (x, e) in p.weight.data().iter().zip(expect) {
            assert!((x - e).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = layer(&[1.0]);
        let mut opt = OptimizerState::new(&p);
        for _ in 0..500 {
            let x = p.weight.data()[0];
            let mut g = zero_like(&p);
            g.weight.data_mut()[0] = 2.0 * x;
            adam_step(&mut p, &g, &mut opt, 1e-2).unwrap();
        }
        assert!(p.weight.data()[0].abs() < 1e-2, "{}", p.weight.data()[0]);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = layer(&[1.0]);
        let g = layer(&[1.0, 2.0]);
        let mut opt = OptimizerState::new(&p);
        assert!(adam_step(&mut p, &g, &mut opt, 0.1).is_err());
    }
}
