use super::Distribution;
use crate::{Error, Result, Scalar};

/// Probabilities are clamped below at this value before any logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

fn clamped_ln<S: Scalar>(p: S) -> S {
    p.max(S::lit(PROB_CLAMP)).ln()
}

/// `-ln(pred[label])`, with the probability clamped at [`PROB_CLAMP`].
pub fn cross_entropy<S: Scalar>(pred: &Distribution<S>, label: usize) -> Result<S> {
    let p = pred.probs().get(label).ok_or_else(|| {
        Error::invalid(format!("label {label} out of range 0..{}", pred.len()))
    })?;
    Ok(-clamped_ln(*p))
}

/// `KL(target || pred) = sum_k t_k ln(t_k / p_k)`, both sides clamped.
pub fn kl_divergence<S: Scalar>(target: &Distribution<S>, pred: &Distribution<S>) -> Result<S> {
    if target.len() != pred.len() {
        return Err(Error::shape(
            "kl_divergence",
            format!("target has {} classes, pred has {}", target.len(), pred.len()),
        ));
    }
    let kl: S = target
        .probs()
        .iter()
        .zip(pred.probs())
        .map(|(&t, &p)| {
            let tc = t.max(S::lit(PROB_CLAMP));
            tc * (clamped_ln(t) - clamped_ln(p))
        })
        .sum();
    // clamping can push an exact-zero KL a few ulps negative
    Ok(kl.max(S::zero()))
}
