use super::params::{NamedTensor, Parameters};
use super::Matrix;
use crate::error::{shape_err, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Per-row normalization with learned gain and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub bias: Matrix,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> LayerNorm {
        LayerNorm { gain: Matrix::from_vec(1, width, vec![1.0; width]).unwrap(), bias: Matrix::zeros(1, width) }
    }

    pub fn width(&self) -> usize {
        self.gain.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerNormCache)> {
        let d = self.width();
        if x.cols() != d {
            return shape_err(format!("layer norm over {d} columns, got {}", x.cols()));
        }
        let mut normalized = x.clone();
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(s);
            for c in 0..d {
                let z = (row[c] - mean) * s;
                normalized.set(r, c, z);
                out.set(r, c, z * self.gain.data()[c] + self.bias.data()[c]);
            }
        }
        Ok((out, LayerNormCache { normalized, inv_std }))
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Matrix, grads: &mut LayerNorm) -> Result<Matrix> {
        let d = self.width();
        if dy.shape() != cache.normalized.shape() {
            return shape_err("layer norm upstream gradient");
        }
        let mut dx = Matrix::zeros(dy.rows(), d);
        let mut dz = vec![0.0; d];
        for r in 0..dy.rows() {
            let z = cache.normalized.row(r);
            let g = dy.row(r);
            for c in 0..d {
                grads.gain.data_mut()[c] += g[c] * z[c];
                grads.bias.data_mut()[c] += g[c];
                dz[c] = g[c] * self.gain.data()[c];
            }
            let mean_dz = dz.iter().sum::<f64>() / d as f64;
            let mean_dz_z = dz.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let s = cache.inv_std[r];
            for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = s * (dz[c] - mean_dz - z[c] * mean_dz_z);
            }
        }
        Ok(dx)
    }
}

impl Parameters for LayerNorm {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        vec![("gain".into(), &self.gain), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.gain, &mut self.bias]
    }
}
