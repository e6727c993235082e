//! Metrics, repeated runs, the ablation harness, and compute-cost accounting.

mod cost;
mod runs;

pub use cost::{conv2d_macs, conv3d_cost_model, count_flops, time_inference, FlopCount, LayerCost, TimingReport, WARMUP_TRIALS};
pub use runs::{ablate, mean_std, repeat_runs, run_once, AblationCase, AblationRow, Experiment, RepeatSummary, RunRecord, Stat};

use serde::{Deserialize, Serialize};

use crate::dataset::Class;
use crate::{Error, Result, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Percent.
    pub accuracy: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: [ClassCounts; NUM_CLASSES],
    pub n_samples: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "accuracy,macro_recall,macro_f1,n_samples";

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.accuracy, self.macro_recall, self.macro_f1, self.n_samples)
    }
}

fn check_lengths(predictions: &[Class], labels: &[Class]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::invalid("metrics need at least one prediction"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Accuracy plus recall and F1 macro-averaged over the classes present in `labels`.
pub fn metrics(predictions: &[Class], labels: &[Class]) -> Result<MetricsReport> {
    check_lengths(predictions, labels)?;
    let mut per_class = [ClassCounts::default(); NUM_CLASSES];
    let mut correct = 0;
    for (&p, &y) in predictions.iter().zip(labels) {
        if p == y {
            correct += 1;
            per_class[y.index()].tp += 1;
        } else {
            per_class[p.index()].fp += 1;
            per_class[y.index()].fn_ += 1;
        }
    }
    let (mut recall, mut f1, mut present) = (0.0, 0.0, 0usize);
    for c in &per_class {
        if c.tp + c.fn_ == 0 {
            continue;
        }
        present += 1;
        let r = c.tp as f64 / (c.tp + c.fn_) as f64;
        let p = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
        recall += r;
        f1 += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    let n = predictions.len();
    Ok(MetricsReport {
        accuracy: 100.0 * correct as f64 / n as f64,
        macro_recall: recall / present as f64,
        macro_f1: f1 / present as f64,
        per_class,
        n_samples: n,
    })
}

/// Mean recall over `classes`, counting only samples labelled with one of
/// them. A prediction outside the subset is a miss.
pub fn subset_macro_recall(predictions: &[Class], labels: &[Class], classes: &[Class]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let mut sum = 0.0;
    let mut present = 0;
    for &c in classes {
        let total = labels.iter().filter(|&&y| y == c).count();
        if total == 0 {
            continue;
        }
        let hit = predictions.iter().zip(labels).filter(|(&p, &y)| y == c && p == c).count();
        sum += hit as f64 / total as f64;
        present += 1;
    }
    if present == 0 {
        return Err(Error::invalid(format!("no samples labelled {classes:?}")));
    }
    Ok(sum / present as f64)
}
