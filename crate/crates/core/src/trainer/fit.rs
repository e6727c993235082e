use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{total_loss, train_step, HistoryRow, LossReport, TrainConfig, TrainState};
use crate::dataset::{augment, rebalance, resize, AugmentPolicy, Class, DatasetSplit, MultiViewSample};
use crate::model::{Model, ModelConfig, PredictionTriple};
use crate::{rng, Error, Result, Scalar};

/// Predicted class (argmax of y3, or y1 for single-view models) and the
/// three head distributions. No loss, distillation or gate work happens here.
pub fn infer<S: Scalar>(model: &Model<S>, sample: &MultiViewSample) -> Result<(Class, PredictionTriple<S>)> {
    let (_, _, preds) = model.forward_all(sample)?;
    Ok((Class::from_index(preds.decision().argmax())?, preds))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub loss: LossReport<f64>,
    /// Percent.
    pub accuracy: f64,
    pub predictions: Vec<Class>,
}

/// Resize only; the deterministic part of the augmentation policy.
fn eval_view(sample: &MultiViewSample, policy: &AugmentPolicy) -> MultiViewSample {
    match policy.resize {
        Some((dm, dt)) => MultiViewSample {
            main_view: resize(&sample.main_view, dm),
            top_view: resize(&sample.top_view, dt),
            ..sample.clone()
        },
        None => sample.clone(),
    }
}

/// Mean loss and decision accuracy over `samples`, without updating anything.
pub fn evaluate<S: Scalar>(model: &Model<S>, samples: &[MultiViewSample], cfg: &TrainConfig) -> Result<EvalSummary> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let per: Vec<Result<(LossReport<S>, Class)>> = samples
        .par_iter()
        .map(|s| {
            let s = eval_view(s, &cfg.augment);
            let f = model.forward_train(&s)?;
            let loss = total_loss(&f.logits, s.label.index(), cfg)?;
            let preds = PredictionTriple::from_logits(&f.logits)?;
            Ok((loss, Class::from_index(preds.decision().argmax())?))
        })
        .collect();
    let mut loss = LossReport::default();
    let mut predictions = Vec::with_capacity(samples.len());
    for p in per {
        let (l, c) = p?;
        loss.add(&l);
        predictions.push(c);
    }
    let n = samples.len() as f64;
    let loss = loss.scaled(S::lit(1.0 / n));
    let correct = predictions.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(EvalSummary {
        loss: to_f64(&loss),
        accuracy: 100.0 * correct as f64 / n,
        predictions,
    })
}

fn to_f64<S: Scalar>(l: &LossReport<S>) -> LossReport<f64> {
    LossReport {
        ce1: l.ce1.to_f64_lossy(),
        ce2: l.ce2.to_f64_lossy(),
        ce3: l.ce3.to_f64_lossy(),
        l_kd: l.l_kd.to_f64_lossy(),
        total: l.total.to_f64_lossy(),
    }
}

fn row(epoch: usize, split: &str, loss: &LossReport<f64>, accuracy: f64) -> HistoryRow {
    HistoryRow {
        epoch,
        split: split.to_string(),
        ce1: loss.ce1,
        ce2: loss.ce2,
        ce3: loss.ce3,
        l_kd: loss.l_kd,
        total: loss.total,
        accuracy,
    }
}

#[derive(Debug, Clone)]
pub struct FitResult<S> {
    pub state: TrainState<S>,
    /// Parameters from the epoch with the highest validation accuracy
    /// (earliest such epoch on ties; epoch 0 is the initialisation).
    pub best: Model<S>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Train a freshly initialised model for `cfg.epochs` epochs.
pub fn fit<S: Scalar>(model: &ModelConfig, cfg: &TrainConfig, split: &DatasetSplit) -> Result<FitResult<S>> {
    cfg.validate()?;
    fit_from(TrainState::init(model, cfg)?, cfg, split)
}

/// Continue `state` up to `cfg.epochs` completed epochs.
///
/// Each epoch visits the (optionally rebalanced) training set in a seeded
/// order with fresh augmentation, then evaluates on the validation split.
/// Train rows hold running means over the epoch's batches.
pub fn fit_from<S: Scalar>(mut state: TrainState<S>, cfg: &TrainConfig, split: &DatasetSplit) -> Result<FitResult<S>> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if split.validation.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let mc = state.model.config();
    cfg.augment.validate(mc.main_dims, mc.top_dims)?;
    let train = if cfg.rebalance {
        rebalance(&split.train, &mut rng::stream(cfg.seed, rng::REBALANCE, &[]))
    } else {
        split.train.clone()
    };

    let mut best = state.model.clone();
    let mut best_epoch = state.epoch;
    let mut best_acc = f64::NEG_INFINITY;
    if state.epoch == 0 && state.history.is_empty() {
        let tr = evaluate(&state.model, &split.train, cfg)?;
        let va = evaluate(&state.model, &split.validation, cfg)?;
        state.history.push(row(0, "train", &tr.loss, tr.accuracy));
        state.history.push(row(0, "validation", &va.loss, va.accuracy));
        best_acc = va.accuracy;
    }

    for epoch in state.epoch + 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, rng::SHUFFLE, &[epoch as u64]));
        let mut sum = LossReport::<S>::default();
        let mut correct = 0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<MultiViewSample> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let pos = (b * cfg.batch_size + j) as u64;
                    let mut r = rng::stream(cfg.seed, rng::AUGMENT, &[epoch as u64, pos]);
                    augment(&train[i], &cfg.augment, &mut r)
                })
                .collect();
            let rep = train_step(&mut state, &batch, cfg)?;
            sum.add(&rep.loss.scaled(S::lit(rep.n as f64)));
            correct += rep.correct;
        }
        let n = train.len() as f64;
        let tr = to_f64(&sum.scaled(S::lit(1.0 / n)));
        state.history.push(row(epoch, "train", &tr, 100.0 * correct as f64 / n));
        let va = evaluate(&state.model, &split.validation, cfg)?;
        state.history.push(row(epoch, "validation", &va.loss, va.accuracy));
        state.epoch = epoch;
        if va.accuracy > best_acc {
            best_acc = va.accuracy;
            best = state.model.clone();
            best_epoch = epoch;
        }
    }
    Ok(FitResult {
        state,
        best,
        best_epoch,
        best_val_accuracy: best_acc,
    })
}
