use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{metrics, subset_macro_recall, MetricsReport};
use crate::dataset::{generate, split, Class, GenerateConfig, MultiViewSample, SplitRatios};
use crate::model::ModelConfig;
use crate::trainer::{evaluate, fit, AblationFlags, TrainConfig};
use crate::{Error, Result};

/// Everything one run needs: the benchmark, the split, the model and the optimiser.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Experiment {
    pub data: GenerateConfig,
    pub split: SplitRatios,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Test-set outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub best_epoch: usize,
    pub metrics: MetricsReport,
    /// Mean recall over Crack and Void test samples.
    pub crack_void_recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; absent for a single value.
    pub std: Option<f64>,
}

impl fmt::Display for Stat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.4} ± {:.4}", self.mean, s),
            None => write!(f, "{:.4}", self.mean),
        }
    }
}

/// Mean and n-1 standard deviation.
pub fn mean_std(xs: &[f64]) -> Stat {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Stat { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub runs: Vec<RunRecord>,
    pub accuracy: Stat,
    pub macro_recall: Stat,
    pub macro_f1: Stat,
    pub crack_void_recall: Stat,
}

impl RepeatSummary {
    fn from_runs(runs: Vec<RunRecord>) -> Self {
        let col = |f: fn(&RunRecord) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            accuracy: col(|r| r.metrics.accuracy),
            macro_recall: col(|r| r.metrics.macro_recall),
            macro_f1: col(|r| r.metrics.macro_f1),
            crack_void_recall: col(|r| r.crack_void_recall),
            runs,
        }
    }
}

/// Train on a split drawn with `seed` (training also seeded with `seed`)
/// and score the best-on-validation parameters on the test split.
pub fn run_once(exp: &Experiment, samples: &[MultiViewSample], seed: u64) -> Result<RunRecord> {
    let sp = split(samples, exp.split, seed)?;
    let cfg = TrainConfig { seed, ..exp.train.clone() };
    let r = fit::<f64>(&exp.model, &cfg, &sp)?;
    let ev = evaluate(&r.best, &sp.test, &cfg)?;
    let labels: Vec<Class> = sp.test.iter().map(|s| s.label).collect();
    Ok(RunRecord {
        seed,
        best_epoch: r.best_epoch,
        metrics: metrics(&ev.predictions, &labels)?,
        crack_void_recall: subset_macro_recall(&ev.predictions, &labels, &[Class::Crack, Class::Void])?,
    })
}

fn runs(exp: &Experiment, n_runs: usize) -> Result<RepeatSummary> {
    let samples = generate(&exp.data)?;
    let base = exp.train.seed;
    let records: Vec<Result<RunRecord>> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| run_once(exp, &samples, base + i))
        .collect();
    Ok(RepeatSummary::from_runs(records.into_iter().collect::<Result<_>>()?))
}

/// `n_runs` independent runs with seeds `train.seed + i`; the dataset itself
/// is generated once from `data.seed`.
pub fn repeat_runs(exp: &Experiment, n_runs: usize) -> Result<RepeatSummary> {
    if n_runs < 2 {
        return Err(Error::invalid(format!("repeat_runs needs at least 2 runs, got {n_runs}")));
    }
    runs(exp, n_runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationCase {
    A,
    B,
    C,
    D,
    Ours,
}

impl AblationCase {
    pub const ALL: [Self; 5] = [Self::A, Self::B, Self::C, Self::D, Self::Ours];

    pub fn flags(self) -> AblationFlags {
        let on = |c: Self| self as u8 >= c as u8;
        AblationFlags {
            use_top_branch: on(Self::B),
            use_fusion: on(Self::C),
            use_distill: on(Self::D),
            use_gate: on(Self::Ours),
        }
    }

    /// Table columns SV, MV, Att, Dist, AM.
    pub fn columns(self) -> [bool; 5] {
        let f = self.flags();
        [true, f.use_top_branch, f.use_fusion, f.use_distill, f.use_gate]
    }
}

impl fmt::Display for AblationCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
            Self::D => "D",
            Self::Ours => "Ours",
        })
    }
}

impl FromStr for AblationCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" => Ok(Self::A),
            "B" => Ok(Self::B),
            "C" => Ok(Self::C),
            "D" => Ok(Self::D),
            "Ours" | "full" => Ok(Self::Ours),
            other => Err(Error::invalid(format!("unknown ablation case {other:?} (A, B, C, D, full)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub case: AblationCase,
    pub columns: [bool; 5],
    pub summary: RepeatSummary,
    /// Mean accuracy gain over the previous row, in points.
    pub delta: Option<f64>,
}

impl AblationRow {
    pub const CSV_HEADER: &'static str =
        "case,SV,MV,Att,Dist,AM,accuracy_mean,accuracy_std,macro_recall_mean,macro_f1_mean,delta";

    pub fn to_csv(&self) -> String {
        let mark = |b: bool| if b { "1" } else { "0" };
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.case,
            mark(self.columns[0]),
            mark(self.columns[1]),
            mark(self.columns[2]),
            mark(self.columns[3]),
            mark(self.columns[4]),
            self.summary.accuracy.mean,
            opt(self.summary.accuracy.std),
            self.summary.macro_recall.mean,
            self.summary.macro_f1.mean,
            opt(self.delta)
        )
    }
}

/// One row per case A..Ours, each averaged over `n_runs` runs.
pub fn ablate(base: &Experiment, n_runs: usize) -> Result<Vec<AblationRow>> {
    if n_runs == 0 {
        return Err(Error::invalid("ablate needs at least one run per case"));
    }
    let mut rows: Vec<AblationRow> = Vec::with_capacity(5);
    for case in AblationCase::ALL {
        let exp = Experiment {
            train: TrainConfig {
                ablation: case.flags(),
                ..base.train.clone()
            },
            ..base.clone()
        };
        let summary = runs(&exp, n_runs)?;
        let delta = rows.last().map(|p| summary.accuracy.mean - p.summary.accuracy.mean);
        rows.push(AblationRow {
            case,
            columns: case.columns(),
            summary,
            delta,
        });
    }
    Ok(rows)
}
