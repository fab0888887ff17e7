use super::Matrix;
use crate::error::{shape_err, Result};

pub type NamedTensor<'a> = (String, &'a Matrix);

/// A fixed, ordered collection of named tensors.
///
/// Gradient buffers are values of the same type, so parameters and their
/// gradients always line up tensor by tensor.
pub trait Parameters {
    fn tensors(&self) -> Vec<NamedTensor<'_>>;
    /// Same order as [`Parameters::tensors`].
    fn tensors_mut(&mut self) -> Vec<&mut Matrix>;
}

pub(crate) fn prefixed<'a>(prefix: &str, inner: Vec<NamedTensor<'a>>) -> impl Iterator<Item = NamedTensor<'a>> + 'a {
    let prefix = prefix.to_string();
    inner.into_iter().map(move |(name, t)| (format!("{prefix}.{name}"), t))
}

/// A copy of `p` with every tensor set to zero.
pub fn zero_like<P: Parameters + Clone>(p: &P) -> P {
    let mut z = p.clone();
    for t in z.tensors_mut() {
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    z
}

pub fn shapes<P: Parameters>(p: &P) -> Vec<(usize, usize)> {
    p.tensors().iter().map(|(_, t)| t.shape()).collect()
}

pub fn parameter_count<P: Parameters>(p: &P) -> usize {
    p.tensors().iter().map(|(_, t)| t.data().len()).sum()
}

/// All entries concatenated in tensor order.
pub fn flatten<P: Parameters>(p: &P) -> Vec<f64> {
    p.tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
}

/// `dst += src`, tensor by tensor.
pub fn accumulate<P: Parameters>(dst: &mut P, src: &P) -> Result<()> {
    let src = src.tensors();
    let dst = dst.tensors_mut();
    if src.len() != dst.len() {
        return shape_err("parameter sets differ in tensor count");
    }
    for (d, (_, s)) in dst.into_iter().zip(src) {
        d.add_assign(s)?;
    }
    Ok(())
}

pub fn scale<P: Parameters>(p: &mut P, s: f64) {
    for t in p.tensors_mut() {
        t.scale(s);
    }
}

/// Euclidean norm over every entry.
pub fn l2_norm<P: Parameters>(p: &P) -> f64 {
    p.tensors().iter().flat_map(|(_, t)| t.data().iter()).map(|x| x * x).sum::<f64>().sqrt()
}

pub fn max_abs<P: Parameters>(p: &P) -> f64 {
    p.tensors().iter().flat_map(|(_, t)| t.data().iter()).fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn norms_and_scaling() {
        let mut l = Linear::new(Matrix::from_vec(1, 1, vec![3.0]).unwrap(), vec![-4.0]).unwrap();
        assert_eq!(l2_norm(&l), 5.0);
        assert_eq!(max_abs(&l), 4.0);
        scale(&mut l, 0.5);
        assert_eq!(flatten(&l), vec![1.5, -2.0]);
    }
}
