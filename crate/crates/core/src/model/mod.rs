//! Two feature branches, the shared attention fusion, and three classifier heads.

pub(crate) mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{Container, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{FeatureSet, Forward, FusionWeights, HeadLogits, PredictionTriple, Trace};
pub use params::{Model, Param};

use serde::{Deserialize, Serialize};

use crate::dataset::Dims;
use crate::numerics::conv_out_extent;
use crate::{Error, Result, NUM_CLASSES};

/// How the two view features are combined for the fused head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Main branch and its head only.
    SingleView,
    /// `h_fused = h_main + h_top`.
    Sum,
    /// `h_fused = a_main * h_main + a_top * h_top`, weights from the shared attention MLP.
    Attention,
}

impl FusionMode {
    pub fn uses_top(self) -> bool {
        self != FusionMode::SingleView
    }
}

/// Parameter ownership; the unit of gate freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleId {
    MainBranch,
    TopBranch,
    Attention,
    HeadMain,
    HeadTop,
    HeadFused,
}

impl ModuleId {
    pub const ALL: [ModuleId; 6] = [
        ModuleId::MainBranch,
        ModuleId::TopBranch,
        ModuleId::Attention,
        ModuleId::HeadMain,
        ModuleId::HeadTop,
        ModuleId::HeadFused,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ModuleId::MainBranch => "main",
            ModuleId::TopBranch => "top",
            ModuleId::Attention => "attention",
            ModuleId::HeadMain => "head_main",
            ModuleId::HeadTop => "head_top",
            ModuleId::HeadFused => "head_fused",
        }
    }
}

/// Classifier head C1 (main), C2 (top), or C3 (fused).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    Main,
    Top,
    Fused,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Main, Head::Top, Head::Fused];

    pub fn module(self) -> ModuleId {
        match self {
            Head::Main => ModuleId::HeadMain,
            Head::Top => ModuleId::HeadTop,
            Head::Fused => ModuleId::HeadFused,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "C1" | "main" => Ok(Head::Main),
            "C2" | "top" => Ok(Head::Top),
            "C3" | "fused" => Ok(Head::Fused),
            other => Err(Error::invalid(format!("unknown head id {other:?}"))),
        }
    }
}

fn default_input_mean() -> f64 {
    0.3
}

fn default_input_std() -> f64 {
    0.15
}

fn default_init_gain() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub main_dims: Dims,
    pub top_dims: Dims,
    /// Output channels per conv layer; the last entry is the feature width d.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub attention_hidden: usize,
    pub head_hidden: usize,
    pub fusion: FusionMode,
    /// Multiplier on the init range of each head's output layer.
    #[serde(default = "default_init_gain")]
    pub head_output_gain: f64,
    /// Pixels enter both branches as `(x - input_mean) / input_std`.
    #[serde(default = "default_input_mean")]
    pub input_mean: f64,
    #[serde(default = "default_input_std")]
    pub input_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            main_dims: Dims::new(32, 32),
            top_dims: Dims::new(32, 24),
            channels: vec![8, 16, 32],
            kernel: 3,
            stride: 2,
            padding: 1,
            attention_hidden: 16,
            head_hidden: 32,
            fusion: FusionMode::Attention,
            head_output_gain: 0.1,
            input_mean: default_input_mean(),
            input_std: default_input_std(),
        }
    }
}

impl ModelConfig {
    /// Width-`w` model for gradient checks: `w` channels per layer, tiny MLPs.
    pub fn tiny(width: usize, main_dims: Dims, top_dims: Dims) -> Self {
        Self {
            main_dims,
            top_dims,
            channels: vec![width; 3],
            attention_hidden: (width / 2).max(1),
            head_hidden: width,
            ..Self::default()
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0)
    }

    pub fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    /// Spatial extents after each conv layer.
    pub fn conv_extents(&self, input: Dims) -> Option<Vec<Dims>> {
        let mut cur = input;
        let mut out = Vec::with_capacity(self.channels.len());
        for _ in &self.channels {
            cur = Dims::new(
                conv_out_extent(cur.height, self.kernel, self.stride, self.padding)?,
                conv_out_extent(cur.width, self.kernel, self.stride, self.padding)?,
            );
            out.push(cur);
        }
        Some(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::invalid(format!("channels {:?} must be non-empty and positive", self.channels)));
        }
        if self.kernel == 0 || self.stride == 0 || self.attention_hidden == 0 || self.head_hidden == 0 {
            return Err(Error::invalid("kernel, stride and hidden widths must be positive"));
        }
        if !(self.head_output_gain > 0.0 && self.head_output_gain.is_finite()) {
            return Err(Error::invalid("head_output_gain must be positive"));
        }
        if !(self.input_std > 0.0 && self.input_std.is_finite() && self.input_mean.is_finite()) {
            return Err(Error::invalid("input_std must be positive and input_mean finite"));
        }
        for (name, d) in [("main", self.main_dims), ("top", self.top_dims)] {
            if self.conv_extents(d).is_none() {
                return Err(Error::invalid(format!("{name} input {d} too small for the conv stack")));
            }
        }
        Ok(())
    }

    /// Modules that take part in the forward pass under this fusion mode.
    pub fn active_modules(&self) -> Vec<ModuleId> {
        match self.fusion {
            FusionMode::SingleView => vec![ModuleId::MainBranch, ModuleId::HeadMain],
            FusionMode::Sum => vec![
                ModuleId::MainBranch,
                ModuleId::TopBranch,
                ModuleId::HeadMain,
                ModuleId::HeadTop,
                ModuleId::HeadFused,
            ],
            FusionMode::Attention => ModuleId::ALL.to_vec(),
        }
    }
}
