//! Tensors, probability vectors, and the differentiable op set.

mod distribution;
mod loss;
mod ops;
mod tensor;

pub use distribution::Distribution;
pub use loss::{cross_entropy, kl_divergence, PROB_CLAMP};
pub use ops::{
    apply_op, backward_op, conv_out_extent, forward_op, log_sum_exp, OpGrads, OpKind, SavedState,
};
pub use tensor::Tensor;

/// Softmax of a plain slice.
pub fn softmax<S: crate::Scalar>(logits: &[S]) -> Vec<S> {
    ops::softmax_vec(logits)
}

/// Log-softmax of a plain slice.
pub fn log_softmax<S: crate::Scalar>(logits: &[S]) -> Vec<S> {
    ops::log_softmax_vec(logits)
}
