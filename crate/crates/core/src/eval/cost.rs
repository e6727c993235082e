use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::runs::{mean_std, Stat};
use crate::dataset::{Dims, MultiViewSample};
use crate::model::{FusionMode, Model, ModelConfig};
use crate::numerics::conv_out_extent;
use crate::{Error, Result, Scalar};

/// Untimed passes over the samples before measurement starts.
pub const WARMUP_TRIALS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
}

/// Multiply-accumulate counts for one inference (the decision head only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCount {
    pub layers: Vec<LayerCost>,
    pub total: u64,
}

impl FlopCount {
    fn push(&mut self, name: impl Into<String>, macs: u64) {
        self.layers.push(LayerCost { name: name.into(), macs });
        self.total += macs;
    }
}

/// `out_pixels * k^2 * c_in * c_out`, and the output extent.
pub fn conv2d_macs(input: Dims, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize) -> Option<(u64, Dims)> {
    let out = Dims::new(
        conv_out_extent(input.height, k, stride, padding)?,
        conv_out_extent(input.width, k, stride, padding)?,
    );
    Some(((out.area() * k * k * c_in * c_out) as u64, out))
}

fn affine(n_in: usize, n_out: usize) -> u64 {
    (n_in * n_out) as u64
}

fn branch(count: &mut FlopCount, cfg: &ModelConfig, prefix: &str, input: Dims) -> Result<()> {
    let mut d = input;
    let mut c_in = 1;
    for (i, &c_out) in cfg.channels.iter().enumerate() {
        let (macs, out) = conv2d_macs(d, c_in, c_out, cfg.kernel, cfg.stride, cfg.padding)
            .ok_or_else(|| Error::invalid(format!("{prefix} input {input} too small for the conv stack")))?;
        count.push(format!("{prefix}.conv{i}"), macs);
        d = out;
        c_in = c_out;
    }
    Ok(())
}

fn head(count: &mut FlopCount, cfg: &ModelConfig, name: &str) {
    let d = cfg.feature_dim();
    count.push(format!("{name}.fc1"), affine(d, cfg.head_hidden));
    count.push(format!("{name}.fc2"), affine(cfg.head_hidden, cfg.num_classes()));
}

/// Analytic MACs per inference: conv `out_pixels * k^2 * C_in * C_out`,
/// affine `in * out`. Multi-view counts both branches, the attention MLP
/// once per view, the weighted sum (`2d`) and head C3; single-view counts
/// the main branch and C1. ReLU and pooling are not counted.
pub fn count_flops(cfg: &ModelConfig) -> Result<FlopCount> {
    cfg.validate()?;
    let mut c = FlopCount {
        layers: Vec::new(),
        total: 0,
    };
    let d = cfg.feature_dim();
    branch(&mut c, cfg, "main", cfg.main_dims)?;
    match cfg.fusion {
        FusionMode::SingleView => head(&mut c, cfg, "head_main"),
        FusionMode::Sum => {
            branch(&mut c, cfg, "top", cfg.top_dims)?;
            head(&mut c, cfg, "head_fused");
        }
        FusionMode::Attention => {
            branch(&mut c, cfg, "top", cfg.top_dims)?;
            for view in ["main", "top"] {
                c.push(format!("attention.fc1[{view}]"), affine(d, cfg.attention_hidden));
                c.push(format!("attention.fc2[{view}]"), affine(cfg.attention_hidden, 1));
            }
            c.push("fusion.weighted_sum", (2 * d) as u64);
            head(&mut c, cfg, "head_fused");
        }
    }
    Ok(c)
}

/// Cost of one 3-D conv branch over a `depth x height x width` volume with
/// the same channels, cubic kernels, stride and padding, plus one head.
/// This is the single-volume alternative to slicing two views.
pub fn conv3d_cost_model(cfg: &ModelConfig, volume: [usize; 3]) -> Result<FlopCount> {
    cfg.validate()?;
    let mut c = FlopCount {
        layers: Vec::new(),
        total: 0,
    };
    let k = cfg.kernel;
    let mut v = volume;
    let mut c_in = 1;
    for (i, &c_out) in cfg.channels.iter().enumerate() {
        let mut out = [0; 3];
        for (o, &e) in out.iter_mut().zip(&v) {
            *o = conv_out_extent(e, k, cfg.stride, cfg.padding)
                .ok_or_else(|| Error::invalid(format!("volume {volume:?} too small for the conv stack")))?;
        }
        c.push(format!("conv3d{i}"), (out.iter().product::<usize>() * k * k * k * c_in * c_out) as u64);
        v = out;
        c_in = c_out;
    }
    head(&mut c, cfg, "head");
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub warmup_trials: usize,
    pub n_trials: usize,
    /// Seconds per sample, averaged over trials.
    pub per_sample: Stat,
}

/// Wall time per sample of `forward_all`, single-threaded. Each trial is one
/// pass over `samples`; [`WARMUP_TRIALS`] passes run first and are discarded.
pub fn time_inference<S: Scalar>(model: &Model<S>, samples: &[MultiViewSample], n_trials: usize) -> Result<TimingReport> {
    if samples.is_empty() || n_trials == 0 {
        return Err(Error::invalid("timing needs samples and at least one trial"));
    }
    let pass = || -> Result<f64> {
        let t = Instant::now();
        for s in samples {
            std::hint::black_box(model.forward_all(s)?);
        }
        Ok(t.elapsed().as_secs_f64() / samples.len() as f64)
    };
    for _ in 0..WARMUP_TRIALS {
        pass()?;
    }
    let times = (0..n_trials).map(|_| pass()).collect::<Result<Vec<_>>>()?;
    Ok(TimingReport {
        warmup_trials: WARMUP_TRIALS,
        n_trials,
        per_sample: mean_std(&times),
    })
}
