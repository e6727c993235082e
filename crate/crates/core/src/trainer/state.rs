use serde::{Deserialize, Serialize};
use serde_json::json;

use super::TrainConfig;
use crate::model::checkpoint::{group_tensor, tensor_group};
use crate::model::{Container, Model, ModelConfig};
use crate::numerics::Tensor;
use crate::{Error, Result, Scalar};

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    /// `"train"` or `"validation"`.
    pub split: String,
    pub ce1: f64,
    pub ce2: f64,
    pub ce3: f64,
    pub l_kd: f64,
    pub total: f64,
    /// Percent.
    pub accuracy: f64,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str = "epoch,split,ce1,ce2,ce3,l_kd,total,accuracy";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.split, self.ce1, self.ce2, self.ce3, self.l_kd, self.total, self.accuracy
        )
    }
}

/// One gate verdict, logged per step and pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateLogRow {
    pub step: u64,
    pub pair: String,
    pub g: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub freeze: bool,
    pub degenerate: bool,
}

impl GateLogRow {
    pub const CSV_HEADER: &'static str = "step,pair,G,epsilon,delta,freeze";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.pair, self.g, self.epsilon, self.delta, self.freeze
        )
    }
}

/// Everything needed to continue a run exactly. Random streams are derived
/// from the config seed and the counters, so no generator state is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<S> {
    pub model: Model<S>,
    pub adam_m: Vec<Tensor<S>>,
    pub adam_v: Vec<Tensor<S>>,
    /// Update count per parameter tensor; frozen steps do not advance it.
    pub adam_t: Vec<u64>,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
    pub history: Vec<HistoryRow>,
    pub gate_log: Vec<GateLogRow>,
}

impl<S: Scalar> TrainState<S> {
    pub fn new(model: Model<S>) -> Self {
        let zeros = model.zero_grads();
        let n = zeros.len();
        Self {
            model,
            adam_m: zeros.clone(),
            adam_v: zeros,
            adam_t: vec![0; n],
            epoch: 0,
            step: 0,
            history: Vec::new(),
            gate_log: Vec::new(),
        }
    }

    /// Fresh state for `cfg`, with the fusion mode taken from the ablation flags.
    pub fn init(model: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self::new(Model::init(cfg.model_config(model), cfg.seed)?))
    }

    pub fn to_container(&self, cfg: &TrainConfig) -> Result<Container> {
        let mut c = self.model.to_container(json!({
            "kind": "train_state",
            "train": cfg,
            "epoch": self.epoch,
            "step": self.step,
            "adam_t": self.adam_t,
            "history": self.history,
            "gate_log": self.gate_log,
        }))?;
        for (p, (m, v)) in self.model.params().iter().zip(self.adam_m.iter().zip(&self.adam_v)) {
            c.groups.push(tensor_group(&format!("adam.m.{}", p.name), m));
            c.groups.push(tensor_group(&format!("adam.v.{}", p.name), v));
        }
        Ok(c)
    }

    /// Restore a state and the config it was trained with.
    pub fn from_container(c: &Container) -> Result<(Self, TrainConfig)> {
        let kind: String = c.meta_field("kind")?;
        if kind != "train_state" {
            return Err(Error::Format(format!("expected a train_state checkpoint, found {kind:?}")));
        }
        let model = Model::from_container(c)?;
        let moment = |prefix: &str| -> Result<Vec<Tensor<S>>> {
            model
                .params()
                .iter()
                .map(|p| {
                    let name = format!("{prefix}.{}", p.name);
                    let g = c
                        .group(&name)
                        .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
                    let t = group_tensor(g)?;
                    if t.shape() != p.tensor.shape() {
                        return Err(Error::Format(format!("{name} has shape {:?}", t.shape())));
                    }
                    Ok(t)
                })
                .collect()
        };
        let adam_m = moment("adam.m")?;
        let adam_v = moment("adam.v")?;
        let adam_t: Vec<u64> = c.meta_field("adam_t")?;
        if adam_t.len() != adam_m.len() {
            return Err(Error::Format("adam_t length does not match parameter count".into()));
        }
        let state = Self {
            model,
            adam_m,
            adam_v,
            adam_t,
            epoch: c.meta_field("epoch")?,
            step: c.meta_field("step")?,
            history: c.meta_field("history")?,
            gate_log: c.meta_field("gate_log")?,
        };
        Ok((state, c.meta_field("train")?))
    }
}
