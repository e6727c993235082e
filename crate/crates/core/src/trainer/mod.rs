//! Total loss, gate-aware optimisation, and inference.

mod fit;
mod loss;
mod state;
mod step;

pub use fit::{evaluate, fit, fit_from, infer, EvalSummary, FitResult};
pub use loss::{loss_and_grad, total_loss, LossReport};
pub use state::{GateLogRow, HistoryRow, TrainState};
pub use step::{batch_loss_and_grad, train_step, StepReport};

use serde::{Deserialize, Serialize};

use crate::dataset::AugmentPolicy;
use crate::distill::DistillConfig;
use crate::model::{FusionMode, ModelConfig};
use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Which parts of the framework are switched on.
///
/// `use_fusion` selects attention fusion; with the top branch on and
/// `use_fusion` off, the fused head sees `h_main + h_top`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    pub use_top_branch: bool,
    pub use_fusion: bool,
    pub use_distill: bool,
    pub use_gate: bool,
}

impl AblationFlags {
    pub const FULL: Self = Self {
        use_top_branch: true,
        use_fusion: true,
        use_distill: true,
        use_gate: true,
    };

    pub fn fusion_mode(&self) -> FusionMode {
        match (self.use_top_branch, self.use_fusion) {
            (false, _) => FusionMode::SingleView,
            (true, false) => FusionMode::Sum,
            (true, true) => FusionMode::Attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.use_top_branch && (self.use_fusion || self.use_distill || self.use_gate) {
            return Err(Error::invalid(
                "fusion, distillation and the gate all need the top branch",
            ));
        }
        Ok(())
    }
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// L2 coefficient; `weight_decay * w` is added to each gradient.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
    pub augment: AugmentPolicy,
    /// Up-sample every class of the training split to the majority count.
    pub rebalance: bool,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            epochs: 20,
            batch_size: 32,
            temperature: 2.0,
            seed: 0,
            augment: AugmentPolicy::base(),
            rebalance: true,
            ablation: AblationFlags::FULL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        self.distill().validate()?;
        self.ablation.validate()
    }

    pub fn distill(&self) -> DistillConfig {
        DistillConfig {
            temperature: self.temperature,
            scale_by_t_squared: true,
        }
    }

    /// `model` with its fusion mode set by the ablation flags.
    pub fn model_config(&self, model: &ModelConfig) -> ModelConfig {
        ModelConfig {
            fusion: self.ablation.fusion_mode(),
            ..model.clone()
        }
    }
}
