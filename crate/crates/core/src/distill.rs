//! Multi-view distillation loss over the three heads.
//!
//! `D(a, b) = KL(soften(b) || soften(a))`: the first argument learns, the
//! second is a detached target. The loss sums
//! `D(y1, y2) + D(y2, y1) + D(y3, y1) + D(y3, y2)`, so the two view heads
//! teach each other and the fused head learns from both.

use serde::{Deserialize, Serialize};

use crate::numerics::{backward_op, forward_op, Distribution, OpKind, Tensor, PROB_CLAMP};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub temperature: f64,
    /// Multiply every term by T^2 to keep gradient magnitudes comparable across T.
    pub scale_by_t_squared: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            scale_by_t_squared: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    fn scale<S: Scalar>(&self) -> S {
        if self.scale_by_t_squared {
            S::lit(self.temperature * self.temperature)
        } else {
            S::one()
        }
    }
}

/// `softmax(logits / T)`.
pub fn soften<S: Scalar>(logits: &[S], temperature: f64) -> Result<Distribution<S>> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let t = S::lit(temperature);
    Distribution::from_logits(&logits.iter().map(|&z| z / t).collect::<Vec<_>>())
}

/// Value of one distillation term and its gradient with respect to the
/// learner logits. The target side receives no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTerm<S> {
    pub value: S,
    pub grad_learner: Vec<S>,
}

/// `D(learner, target)` against an already-softened target distribution.
pub fn kd_term_against<S: Scalar>(learner: &[S], target: &Distribution<S>, cfg: &DistillConfig) -> Result<KdTerm<S>> {
    cfg.validate()?;
    if learner.len() != target.len() {
        return Err(Error::shape(
            "multiview_kd_loss",
            format!("learner has {} logits, target has {} classes", learner.len(), target.len()),
        ));
    }
    let t = S::lit(cfg.temperature);
    let scaled = Tensor::vector(learner.iter().map(|&z| z / t).collect());
    let (log_q, saved) = forward_op(OpKind::LogSoftmax, &[&scaled], &[])?;
    let clamp = S::lit(PROB_CLAMP);
    let p = target.probs();
    let kl: S = p
        .iter()
        .zip(log_q.data())
        .map(|(&pk, &lq)| {
            let pc = pk.max(clamp);
            pc * (pc.ln() - lq)
        })
        .sum();
    let k = cfg.scale::<S>();
    // d(value)/d(log_q) = -k * p_clamped
    let upstream = Tensor::vector(p.iter().map(|&pk| -k * pk.max(clamp)).collect());
    let g = backward_op(OpKind::LogSoftmax, Some(&saved), &upstream)?;
    Ok(KdTerm {
        value: k * kl.max(S::zero()),
        grad_learner: g.inputs[0].data().iter().map(|&v| v / t).collect(),
    })
}

/// `D(learner, target)` with the target given as logits.
pub fn kd_term<S: Scalar>(learner: &[S], target: &[S], cfg: &DistillConfig) -> Result<KdTerm<S>> {
    if learner.len() != target.len() {
        return Err(Error::shape(
            "multiview_kd_loss",
            format!("logit lengths {} and {}", learner.len(), target.len()),
        ));
    }
    kd_term_against(learner, &soften(target, cfg.temperature)?, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdLoss<S> {
    /// `[D(y1,y2), D(y2,y1), D(y3,y1), D(y3,y2)]`; absent heads leave zeros.
    pub terms: [S; 4],
    pub total: S,
    /// Gradients for logits1, logits2, logits3.
    pub grads: [Vec<S>; 3],
}

/// Softened targets used in place of the live head outputs. Gradient checks
/// hold these fixed so finite differences see the same function the
/// analytic gradient describes.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftTargets<S> {
    pub main: Distribution<S>,
    pub top: Option<Distribution<S>>,
}

impl<S: Scalar> SoftTargets<S> {
    pub fn from_logits(main: &[S], top: Option<&[S]>, cfg: &DistillConfig) -> Result<Self> {
        Ok(Self {
            main: soften(main, cfg.temperature)?,
            top: top.map(|t| soften(t, cfg.temperature)).transpose()?,
        })
    }
}

/// Distillation over whichever heads exist. With only main and top, the two
/// mutual terms remain; with only main, the loss is zero.
pub fn kd_loss_with_targets<S: Scalar>(
    logits1: &[S],
    logits2: Option<&[S]>,
    logits3: Option<&[S]>,
    targets: &SoftTargets<S>,
    cfg: &DistillConfig,
) -> Result<KdLoss<S>> {
    let k = logits1.len();
    for l in [logits2, logits3].into_iter().flatten() {
        if l.len() != k {
            return Err(Error::shape("multiview_kd_loss", format!("logit lengths {k} and {}", l.len())));
        }
    }
    let mut terms = [S::zero(); 4];
    let mut grads = [vec![S::zero(); k], vec![S::zero(); k], vec![S::zero(); k]];
    let (Some(l2), Some(t2)) = (logits2, targets.top.as_ref()) else {
        return Ok(KdLoss {
            terms,
            total: S::zero(),
            grads,
        });
    };
    let mut add = |slot: usize, learner: &[S], target: &Distribution<S>, head: usize| -> Result<()> {
        let t = kd_term_against(learner, target, cfg)?;
        terms[slot] = t.value;
        for (g, v) in grads[head].iter_mut().zip(t.grad_learner) {
            *g += v;
        }
        Ok(())
    };
    add(0, logits1, t2, 0)?;
    add(1, l2, &targets.main, 1)?;
    if let Some(l3) = logits3 {
        add(2, l3, &targets.main, 2)?;
        add(3, l3, t2, 2)?;
    }
    let total = terms.iter().copied().sum();
    Ok(KdLoss { terms, total, grads })
}

/// The four-term loss for one sample.
pub fn multiview_kd_loss<S: Scalar>(logits1: &[S], logits2: &[S], logits3: &[S], cfg: &DistillConfig) -> Result<KdLoss<S>> {
    cfg.validate()?;
    let targets = SoftTargets::from_logits(logits1, Some(logits2), cfg)?;
    kd_loss_with_targets(logits1, Some(logits2), Some(logits3), &targets, cfg)
}

/// Mean of the per-sample losses; gradients are scaled by 1/B.
pub fn multiview_kd_loss_batch<S: Scalar>(batch: &[[Vec<S>; 3]], cfg: &DistillConfig) -> Result<(S, Vec<KdLoss<S>>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let inv = S::one() / S::lit(batch.len() as f64);
    let mut total = S::zero();
    let mut per = Vec::with_capacity(batch.len());
    for [a, b, c] in batch {
        let mut l = multiview_kd_loss(a, b, c, cfg)?;
        total += l.total;
        l.grads.iter_mut().flatten().for_each(|g| *g *= inv);
        per.push(l);
    }
    Ok((total * inv, per))
}
