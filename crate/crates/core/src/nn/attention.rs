use rand::Rng;

use super::matrix::dot;
use super::params::{prefixed, NamedTensor, Parameters};
use super::{Linear, Matrix};
use crate::error::{shape_err, Result};

/// Scaled dot-product attention over `heads` column blocks, followed by an
/// output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    heads: usize,
}

/// Projected keys and values of a memory. Decoders that attend to the same
/// memory many times project it once.
#[derive(Clone, Debug)]
pub struct KeyValues {
    pub keys: Matrix,
    pub values: Matrix,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    input: Matrix,
    queries: Matrix,
    weights: Vec<Matrix>,
    mixed: Matrix,
}

impl AttentionCache {
    /// Attention weights of each head, `queries x keys`.
    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }
}

impl MultiHeadAttention {
    pub fn new(query: Linear, key: Linear, value: Linear, output: Linear, heads: usize) -> Result<Self> {
        let d = query.output_dim();
        let square = |l: &Linear| l.input_dim() == d && l.output_dim() == d;
        if heads == 0 || d % heads != 0 || ![&query, &key, &value, &output].into_iter().all(square) {
            return shape_err(format!("attention with width {d} and {heads} heads"));
        }
        Ok(MultiHeadAttention { query, key, value, output, heads })
    }

    pub fn init<R: Rng + ?Sized>(width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        let query = Linear::init(width, width, rng);
        let key = Linear::init(width, width, rng);
        let value = Linear::init(width, width, rng);
        let output = Linear::init(width, width, rng);
        Self::new(query, key, value, output, heads)
    }

    pub fn width(&self) -> usize {
        self.query.output_dim()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn project(&self, memory: &Matrix) -> Result<KeyValues> {
        Ok(KeyValues { keys: self.key.forward(memory)?, values: self.value.forward(memory)? })
    }

    pub fn attend(&self, queries_in: &Matrix, kv: &KeyValues) -> Result<(Matrix, AttentionCache)> {
        let d = self.width();
        if kv.keys.cols() != d || kv.keys.rows() == 0 {
            return shape_err("attention memory is empty or has the wrong width");
        }
        let queries = self.query.forward(queries_in)?;
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (m, r) = (queries.rows(), kv.keys.rows());
        let mut mixed = Matrix::zeros(m, d);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = h * dk..(h + 1) * dk;
            let mut w = Matrix::zeros(m, r);
            for i in 0..m {
                let q = &queries.row(i)[cols.clone()];
                let row = w.row_mut(i);
                for (j, s) in row.iter_mut().enumerate() {
                    *s = scale * dot(q, &kv.keys.row(j)[cols.clone()]);
                }
                softmax_in_place(row);
                let out = &mut mixed.row_mut(i)[cols.clone()];
                for (j, &a) in row.iter().enumerate() {
                    for (o, v) in out.iter_mut().zip(&kv.values.row(j)[cols.clone()]) {
                        *o += a * v;
                    }
                }
            }
            weights.push(w);
        }
        let y = self.output.forward(&mixed)?;
        Ok((y, AttentionCache { input: queries_in.clone(), queries, weights, mixed }))
    }

    /// Full attention of `queries_in` over `memory`.
    pub fn forward(&self, queries_in: &Matrix, memory: &Matrix) -> Result<(Matrix, AttentionCache, KeyValues)> {
        let kv = self.project(memory)?;
        let (y, cache) = self.attend(queries_in, &kv)?;
        Ok((y, cache, kv))
    }

    /// Backward through [`attend`](Self::attend): returns gradients for the
    /// query input, the projected keys and the projected values.
    pub fn backward_attend(
        &self,
        cache: &AttentionCache,
        kv: &KeyValues,
        dy: &Matrix,
        grads: &mut MultiHeadAttention,
    ) -> Result<(Matrix, Matrix, Matrix)> {
        let d = self.width();
        let dk = d / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let dmixed = self.output.backward(&cache.mixed, dy, &mut grads.output)?;
        let (m, r) = (cache.queries.rows(), kv.keys.rows());
        let mut dq = Matrix::zeros(m, d);
        let mut dkeys = Matrix::zeros(r, d);
        let mut dvalues = Matrix::zeros(r, d);
        let mut dw = vec![0.0; r];
        for (h, w) in cache.weights.iter().enumerate() {
            let cols = h * dk..(h + 1) * dk;
            for i in 0..m {
                let g = &dmixed.row(i)[cols.clone()];
                let a = w.row(i);
                for j in 0..r {
                    dw[j] = dot(g, &kv.values.row(j)[cols.clone()]);
                    for (dv, gv) in dvalues.row_mut(j)[cols.clone()].iter_mut().zip(g) {
                        *dv += a[j] * gv;
                    }
                }
                let inner: f64 = a.iter().zip(&dw).map(|(x, y)| x * y).sum();
                let q = &cache.queries.row(i)[cols.clone()];
                for j in 0..r {
                    let ds = scale * a[j] * (dw[j] - inner);
                    if ds == 0.0 {
                        continue;
                    }
                    for (o, k) in dq.row_mut(i)[cols.clone()].iter_mut().zip(&kv.keys.row(j)[cols.clone()]) {
                        *o += ds * k;
                    }
                    for (o, qv) in dkeys.row_mut(j)[cols.clone()].iter_mut().zip(q) {
                        *o += ds * qv;
                    }
                }
            }
        }
        let dx = self.query.backward(&cache.input, &dq, &mut grads.query)?;
        Ok((dx, dkeys, dvalues))
    }

    /// Backward through [`project`](Self::project).
    pub fn backward_project(
        &self,
        memory: &Matrix,
        dkeys: &Matrix,
        dvalues: &Matrix,
        grads: &mut MultiHeadAttention,
    ) -> Result<Matrix> {
        let mut dm = self.key.backward(memory, dkeys, &mut grads.key)?;
        dm.add_assign(&self.value.backward(memory, dvalues, &mut grads.value)?)?;
        Ok(dm)
    }

    /// Backward through [`forward`](Self::forward): gradients for the query
    /// input and the memory.
    pub fn backward(
        &self,
        memory: &Matrix,
        cache: &AttentionCache,
        kv: &KeyValues,
        dy: &Matrix,
        grads: &mut MultiHeadAttention,
    ) -> Result<(Matrix, Matrix)> {
        let (dq, dk, dv) = self.backward_attend(cache, kv, dy, grads)?;
        let dm = self.backward_project(memory, &dk, &dv, grads)?;
        Ok((dq, dm))
    }
}

/// Numerically stable softmax. Entries equal to `-inf` get exactly zero.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = if *x == f64::NEG_INFINITY { 0.0 } else { (*x - max).exp() };
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

impl Parameters for MultiHeadAttention {
    fn tensors(&self) -> Vec<NamedTensor<'_>> {
        prefixed("query", self.query.tensors())
            .chain(prefixed("key", self.key.tensors()))
            .chain(prefixed("value", self.value.tensors()))
            .chain(prefixed("output", self.output.tensors()))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.query.tensors_mut();
        out.extend(self.key.tensors_mut());
        out.extend(self.value.tensors_mut());
        out.extend(self.output.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{central_difference, input_difference, relative_error};
    use crate::nn::{flatten, uniform_init, zero_like};
    use crate::rng;

    fn identity_attention(d: usize, heads: usize) -> MultiHeadAttention {
        let id = || Linear::new(Matrix::identity(d), vec![0.0; d]).unwrap();
        MultiHeadAttention::new(id(), id(), id(), id(), heads).unwrap()
    }

    #[test]
    fn single_row_returns_its_value() {
        let mut rng = rng::stream(1, &[]);
        let mut attn = identity_attention(4, 2);
        attn.value = Linear::init(4, 4, &mut rng);
        let x = uniform_init(1, 4, 1, &mut rng);
        let (y, _, _) = attn.forward(&x, &x).unwrap();
        let v = attn.value.forward(&x).unwrap();
        assert!(y.max_abs_diff(&v) < 1e-12);
    }

    #[test]
    fn identical_keys_split_evenly() {
        let mut rng = rng::stream(2, &[]);
        let attn = MultiHeadAttention::init(8, 2, &mut rng).unwrap();
        let row = uniform_init(1, 8, 1, &mut rng);
        let memory = row.vstack(&row).unwrap();
        let queries = uniform_init(3, 8, 1, &mut rng);
        let (_, cache, _) = attn.forward(&queries, &memory).unwrap();
        for w in cache.weights() {
            assert!(w.data().iter().all(|&a| (a - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn weights_are_distributions() {
        let mut rng = rng::stream(3, &[]);
        let attn = MultiHeadAttention::init(8, 4, &mut rng).unwrap();
        let x = uniform_init(6, 8, 1, &mut rng);
        let (_, cache, _) = attn.forward(&x, &x).unwrap();
        for w in cache.weights() {
            for r in 0..w.rows() {
                assert!(w.row(r).iter().all(|&a| a >= 0.0));
                assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = rng::stream(4, &[]);
        assert!(MultiHeadAttention::init(6, 4, &mut rng).is_err());
        let attn = MultiHeadAttention::init(8, 2, &mut rng).unwrap();
        assert!(attn.forward(&Matrix::zeros(2, 8), &Matrix::zeros(2, 6)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng::stream(6, &[]);
        let attn = MultiHeadAttention::init(8, 2, &mut rng).unwrap();
        let queries = uniform_init(3, 8, 1, &mut rng);
        let memory = uniform_init(5, 8, 1, &mut rng);
        let w = uniform_init(3, 8, 1, &mut rng);
        let loss = |a: &MultiHeadAttention, q: &Matrix, m: &Matrix| {
            let (y, _, _) = a.forward(q, m).unwrap();
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache, kv) = attn.forward(&queries, &memory).unwrap();
        let mut grads = zero_like(&attn);
        let (dq, dm) = attn.backward(&memory, &cache, &kv, &w, &mut grads).unwrap();
        let numeric = central_difference(&attn, |a| loss(a, &queries, &memory), 1e-5);
        assert!(relative_error(&flatten(&grads), &numeric) < 1e-4);
        assert!(relative_error(dq.data(), &input_difference(&queries, |q| loss(&attn, q, &memory), 1e-5)) < 1e-4);
        assert!(relative_error(dm.data(), &input_difference(&memory, |m| loss(&attn, &queries, m), 1e-5)) < 1e-4);
    }
}
