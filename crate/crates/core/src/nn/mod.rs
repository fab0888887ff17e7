//! Dense matrices and the layers of the attention model, each with an exact
//! hand-derived backward pass.
//!
//! Every layer follows the same pattern: `forward` returns the output plus a
//! cache of intermediates, and `backward` consumes that cache together with
//! the upstream gradient, accumulates parameter gradients into a buffer of
//! the layer's own type, and returns the gradient with respect to the input.

mod attention;
pub mod checkpoint;
mod encoder;
mod layer_norm;
mod linear;
mod matrix;
mod params;

pub mod gradcheck;

pub use attention::{AttentionCache, KeyValues, MultiHeadAttention};
pub(crate) use attention::softmax_in_place;
pub use encoder::{AttentionConfig, EncoderBlock, EncoderBlockCache, FeedForward, FeedForwardCache};
pub use layer_norm::{LayerNorm, LayerNormCache, LAYER_NORM_EPS};
pub use linear::Linear;
pub use matrix::Matrix;
pub use params::{
    accumulate, flatten, l2_norm, max_abs, parameter_count, scale, shapes, zero_like, NamedTensor, Parameters,
};

use rand::Rng;

/// Matrix with entries drawn uniformly from `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| {
            // open interval: reject the (measure-zero) lower endpoint
            loop {
                let x: f64 = rng.gen_range(-bound..bound);
                if x > -bound {
                    break x;
                }
            }
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}
