use crate::{Error, Result, Scalar};

const SUM_TOLERANCE: f64 = 1e-9;

/// A probability vector: non-negative entries summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<S> {
    probs: Vec<S>,
}

impl<S: Scalar> Distribution<S> {
    pub fn new(probs: Vec<S>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if probs
            .iter()
            .any(|&p| !p.is_finite() || p < S::zero() || p > S::one())
        {
            return Err(Error::invalid(format!(
                "distribution entries must lie in [0, 1]: {probs:?}"
            )));
        }
        let sum: f64 = probs.iter().map(|p| p.to_f64_lossy()).sum();
        // f32 distributions cannot meet a 1e-9 sum tolerance
        let tol = SUM_TOLERANCE.max(S::epsilon().to_f64_lossy() * probs.len() as f64 * 4.0);
        if (sum - 1.0).abs() > tol {
            return Err(Error::invalid(format!(
                "distribution sums to {sum}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn one_hot(class: usize, k: usize) -> Result<Self> {
        if class >= k {
            return Err(Error::invalid(format!("class {class} out of range 0..{k}")));
        }
        let mut probs = vec![S::zero(); k];
        probs[class] = S::one();
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        let p = S::one() / S::lit(k as f64);
        Self { probs: vec![p; k] }
    }

    /// Softmax of a logit vector; always a valid distribution for finite input.
    pub fn from_logits(logits: &[S]) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite or empty logits: {logits:?}")));
        }
        Ok(Self {
            probs: super::ops::softmax_vec(logits),
        })
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}
