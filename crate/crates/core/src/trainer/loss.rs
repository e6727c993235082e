use super::TrainConfig;
use crate::distill::{kd_loss_with_targets, SoftTargets};
use crate::model::HeadLogits;
use crate::numerics::{log_softmax, softmax};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport<S> {
    pub ce1: S,
    pub ce2: S,
    pub ce3: S,
    pub l_kd: S,
    pub total: S,
}

impl<S: Scalar> LossReport<S> {
    pub fn components(&self) -> [S; 5] {
        [self.ce1, self.ce2, self.ce3, self.l_kd, self.total]
    }

    pub(crate) fn add(&mut self, o: &Self) {
        self.ce1 += o.ce1;
        self.ce2 += o.ce2;
        self.ce3 += o.ce3;
        self.l_kd += o.l_kd;
        self.total += o.total;
    }

    pub(crate) fn scaled(&self, k: S) -> Self {
        Self {
            ce1: self.ce1 * k,
            ce2: self.ce2 * k,
            ce3: self.ce3 * k,
            l_kd: self.l_kd * k,
            total: self.total * k,
        }
    }
}

/// `-log softmax(z)[label]` and its gradient `softmax(z) - onehot`.
fn ce_with_grad<S: Scalar>(z: &[S], label: usize) -> Result<(S, Vec<S>)> {
    if label >= z.len() {
        return Err(Error::invalid(format!("label {label} out of range for {} classes", z.len())));
    }
    let loss = -log_softmax(z)[label];
    let mut g = softmax(z);
    g[label] -= S::one();
    Ok((loss, g))
}

/// Loss for one sample and its gradient with respect to each head's logits.
///
/// Heads that did not run contribute nothing. Distillation uses `targets`
/// when given, otherwise the softened live outputs of the main and top heads.
pub fn loss_and_grad<S: Scalar>(
    logits: &HeadLogits<S>,
    label: usize,
    cfg: &TrainConfig,
    targets: Option<&SoftTargets<S>>,
) -> Result<(LossReport<S>, HeadLogits<S>)> {
    let (ce1, mut g1) = ce_with_grad(&logits.main, label)?;
    let mut g2 = None;
    let mut g3 = None;
    let mut r = LossReport {
        ce1,
        ..LossReport::default()
    };
    if let Some(z) = &logits.top {
        let (l, g) = ce_with_grad(z, label)?;
        r.ce2 = l;
        g2 = Some(g);
    }
    if let Some(z) = &logits.fused {
        let (l, g) = ce_with_grad(z, label)?;
        r.ce3 = l;
        g3 = Some(g);
    }
    if cfg.ablation.use_distill && logits.top.is_some() {
        let dcfg = cfg.distill();
        let live;
        let targets = match targets {
            Some(t) => t,
            None => {
                live = SoftTargets::from_logits(&logits.main, logits.top.as_deref(), &dcfg)?;
                &live
            }
        };
        let kd = kd_loss_with_targets(
            &logits.main,
            logits.top.as_deref(),
            logits.fused.as_deref(),
            targets,
            &dcfg,
        )?;
        r.l_kd = kd.total;
        let [k1, k2, k3] = kd.grads;
        for (a, b) in g1.iter_mut().zip(k1) {
            *a += b;
        }
        for (g, k) in [(&mut g2, k2), (&mut g3, k3)] {
            if let Some(g) = g {
                for (a, b) in g.iter_mut().zip(k) {
                    *a += b;
                }
            }
        }
    }
    r.total = r.ce1 + r.ce2 + r.ce3 + r.l_kd;
    Ok((
        r,
        HeadLogits {
            main: g1,
            top: g2,
            fused: g3,
        },
    ))
}

/// `ce1 + ce2 + ce3 + l_kd` for one sample.
pub fn total_loss<S: Scalar>(logits: &HeadLogits<S>, label: usize, cfg: &TrainConfig) -> Result<LossReport<S>> {
    Ok(loss_and_grad(logits, label, cfg, None)?.0)
}
