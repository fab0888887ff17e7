use rand::Rng;

use super::params::{NamedTensor, Parameters};
use super::{uniform_init, Matrix};
use crate::error::{shape_err, Result};

/// Affine map `y = x W + b` with `W` stored as `input x output`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Linear {
        Linear { weight: Matrix::zeros(input, output), bias: Matrix::zeros(1, output) }
    }

    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Linear> {
        if bias.len() != weight.cols() {
            return shape_err(format!("bias of {} for {} outputs", bias.len(), weight.cols()));
        }
        Ok(Linear { weight, bias: Matrix::row_vector(bias) })
    }

    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Linear {
        Linear {
            weight: uniform_init(input, output, input, rng),
            bias: uniform_init(1, output, input, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return shape_err(format!("linear expects {} inputs, got {}", self.input_dim(), x.cols()));
        }
        let mut y = x.matmul(&self.weight)?;
        y.add_row(self.bias.data())?;
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grads: &mut Linear) -> Result<Matrix> {
        if dy.shape() != (x.rows(), self.output_dim()) {
            return shape_err(format!("linear upstream gradient {:?}", dy.shape()));
        }
        grads.weight.add_assign(&x.t_matmul(dy)?)?;
        for (g, s) in grads.bias.data_mut().iter_mut().zip(dy.column_sums()) {
            *g += s;
        }
        dy.matmul_t(&self.weight)
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, input_difference, relative_error};
    use crate::nn::{flatten, zero_like};
    use crate::rng;

    #[test]
    fn identity_passes_through() {
        let layer = Linear::new(Matrix::identity(3), vec![0.0; 3]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.0, 0.0, 1.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic() {
        let layer = Linear::new(Matrix::identity(2), vec![3.0, 3.0]).unwrap();
        let y = layer.forward(&Matrix::row_vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0]);
        assert!(layer.forward(&Matrix::row_vector(vec![1.0])).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::stream(5, &[]);
        let layer = Linear::init(5, 4, &mut rng);
        let x = crate::nn::uniform_init(3, 5, 1, &mut rng);
        let loss = |l: &Linear, x: &Matrix| l.forward(x).unwrap().data().iter().sum::<f64>();

        let mut grads = zero_like(&layer);
        let ones = Matrix::from_vec(3, 4, vec![1.0; 12]).unwrap();
        let dx = layer.backward(&x, &ones, &mut grads).unwrap();

        let numeric = central_difference(&layer, |l| loss(l, &x), 1e-5);
        assert!(relative_error(&flatten(&grads), &numeric) < 1e-6);
        let numeric_x = input_difference(&x, |x| loss(&layer, x), 1e-5);
        assert!(relative_error(dx.data(), &numeric_x) < 1e-6);
    }
}
