use std::collections::BTreeSet;

use rayon::prelude::*;

use super::{loss_and_grad, GateLogRow, LossReport, TrainConfig, TrainState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::dataset::MultiViewSample;
use crate::distill::SoftTargets;
use crate::gate::{decide_batch, GateDecision, Role, TeacherStudentPair};
use crate::model::{Model, ModuleId, PredictionTriple};
use crate::numerics::{Distribution, Tensor};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<S> {
    /// Batch-mean loss components.
    pub loss: LossReport<S>,
    pub correct: usize,
    pub n: usize,
    pub decisions: Vec<GateDecision<S>>,
    pub frozen: BTreeSet<ModuleId>,
}

struct SampleOut<S> {
    loss: LossReport<S>,
    grads: Vec<Tensor<S>>,
    preds: PredictionTriple<S>,
}

fn sample_pass<S: Scalar>(
    model: &Model<S>,
    sample: &MultiViewSample,
    cfg: &TrainConfig,
    targets: Option<&SoftTargets<S>>,
) -> Result<SampleOut<S>> {
    let f = model.forward_train(sample)?;
    for (name, l) in [
        ("main", Some(&f.logits.main)),
        ("top", f.logits.top.as_ref()),
        ("fused", f.logits.fused.as_ref()),
    ] {
        if l.is_some_and(|l| l.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("logits.{name} of sample {}", sample.id)));
        }
    }
    let (loss, g) = loss_and_grad(&f.logits, sample.label.index(), cfg, targets)?;
    let grads = model.backward(&f.trace, &g)?;
    let preds = PredictionTriple::from_logits(&f.logits)?;
    Ok(SampleOut { loss, grads, preds })
}

/// Batch-mean loss, parameter gradients, and per-sample predictions.
///
/// Samples run in parallel; results are summed in batch order so the
/// outcome does not depend on scheduling. `targets`, when given, fixes the
/// distillation targets per sample instead of using the live head outputs.
pub fn batch_loss_and_grad<S: Scalar>(
    model: &Model<S>,
    batch: &[MultiViewSample],
    cfg: &TrainConfig,
    targets: Option<&[SoftTargets<S>]>,
) -> Result<(LossReport<S>, Vec<Tensor<S>>, Vec<PredictionTriple<S>>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(t) = targets {
        if t.len() != batch.len() {
            return Err(Error::invalid(format!("{} soft targets for {} samples", t.len(), batch.len())));
        }
    }
    let outs: Vec<Result<SampleOut<S>>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_pass(model, s, cfg, targets.map(|t| &t[i])))
        .collect();
    let inv = S::one() / S::lit(batch.len() as f64);
    let mut loss = LossReport::default();
    let mut grads = model.zero_grads();
    let mut preds = Vec::with_capacity(batch.len());
    for o in outs {
        let o = o?;
        loss.add(&o.loss);
        for (a, b) in grads.iter_mut().zip(&o.grads) {
            a.add_assign(b)?;
        }
        preds.push(o.preds);
    }
    for g in &mut grads {
        g.scale(inv);
    }
    Ok((loss.scaled(inv), grads, preds))
}

fn gate_decisions<S: Scalar>(
    preds: &[PredictionTriple<S>],
    batch: &[MultiViewSample],
) -> Result<Vec<GateDecision<S>>> {
    let k = preds[0].y1.len();
    let onehots = batch
        .iter()
        .map(|s| Distribution::one_hot(s.label.index(), k))
        .collect::<Result<Vec<_>>>()?;
    let head = |p: &'_ PredictionTriple<S>, r: Role| -> Option<Distribution<S>> {
        match r {
            Role::Main => Some(p.y1.clone()),
            Role::Top => p.y2.clone(),
            Role::Fusion => p.y3.clone(),
        }
    };
    let mut out = Vec::new();
    for pair in TeacherStudentPair::ALL {
        let mut rows = Vec::with_capacity(preds.len());
        for p in preds {
            match (head(p, pair.teacher()), head(p, pair.student())) {
                (Some(t), Some(s)) => rows.push((t, s)),
                _ => break,
            }
        }
        if rows.len() != preds.len() {
            continue;
        }
        let triples: Vec<_> = rows.iter().zip(&onehots).map(|((t, s), y)| (t, s, y)).collect();
        out.push(decide_batch(pair, &triples)?);
    }
    Ok(out)
}

/// One optimisation step on `batch`.
///
/// Gate verdicts are taken from this batch's predictions before the update.
/// Parameters of a frozen or inactive module are left untouched, including
/// their Adam moments and step counts.
pub fn train_step<S: Scalar>(
    state: &mut TrainState<S>,
    batch: &[MultiViewSample],
    cfg: &TrainConfig,
) -> Result<StepReport<S>> {
    let (loss, grads, preds) = batch_loss_and_grad(&state.model, batch, cfg, None)?;
    if !loss.total.is_finite() {
        let names = ["ce1", "ce2", "ce3", "l_kd", "total"];
        let i = loss.components().iter().position(|v| !v.is_finite()).unwrap_or(4);
        return Err(Error::NonFinite(format!("loss {}", names[i])));
    }
    if let Some((p, _)) = state.model.params().iter().zip(&grads).find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of {}", p.name)));
    }

    let mut frozen = BTreeSet::new();
    let mut decisions = Vec::new();
    if cfg.ablation.use_gate {
        decisions = gate_decisions(&preds, batch)?;
        for d in &decisions {
            if d.freeze_teacher {
                frozen.extend(d.pair.teacher().exclusive_modules().iter().copied());
            }
        }
    }
    let active = state.model.config().active_modules();
    let lr = S::lit(cfg.learning_rate);
    let wd = S::lit(cfg.weight_decay);
    let (b1, b2, eps) = (S::lit(ADAM_BETA1), S::lit(ADAM_BETA2), S::lit(ADAM_EPS));
    for (i, g) in grads.iter().enumerate() {
        let module = state.model.params()[i].module;
        if frozen.contains(&module) || !active.contains(&module) {
            continue;
        }
        state.adam_t[i] += 1;
        let t = state.adam_t[i] as i32;
        let (c1, c2) = (S::one() - b1.powi(t), S::one() - b2.powi(t));
        let w = state.model.params_mut()[i].tensor.data_mut();
        let m = state.adam_m[i].data_mut();
        let v = state.adam_v[i].data_mut();
        for j in 0..w.len() {
            let gj = g.data()[j] + wd * w[j];
            m[j] = b1 * m[j] + (S::one() - b1) * gj;
            v[j] = b2 * v[j] + (S::one() - b2) * gj * gj;
            w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
        }
    }

    state.step += 1;
    for d in &decisions {
        state.gate_log.push(GateLogRow {
            step: state.step,
            pair: d.pair.to_string(),
            g: d.g.to_f64_lossy(),
            epsilon: d.epsilon.to_f64_lossy(),
            delta: d.delta.to_f64_lossy(),
            freeze: d.freeze_teacher,
            degenerate: d.degenerate,
        });
    }
    let correct = preds
        .iter()
        .zip(batch)
        .filter(|(p, s)| p.decision().argmax() == s.label.index())
        .count();
    Ok(StepReport {
        loss,
        correct,
        n: batch.len(),
        decisions,
        frozen,
    })
}
