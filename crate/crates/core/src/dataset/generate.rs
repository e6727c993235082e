use rand::Rng as _;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::patterns::{main_bank, render_main, render_top, top_bank};
use super::{Class, Dims, Image, MultiViewSample};
use crate::{rng, Error, Result};

/// Per-class sample counts of the reference benchmark (682 samples).
pub const DEFAULT_COUNTS: [usize; 4] = [200, 286, 173, 23];

pub const MIN_EXTENT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub counts: [usize; 4],
    pub main_dims: Dims,
    pub top_dims: Dims,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            counts: DEFAULT_COUNTS,
            main_dims: Dims::new(32, 32),
            top_dims: Dims::new(32, 24),
            noise_level: 0.08,
            seed: 0,
        }
    }
}

impl GenerateConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.counts.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!(
                "count for class {} must be positive",
                Class::ALL[i].name()
            )));
        }
        for (name, d) in [("main", self.main_dims), ("top", self.top_dims)] {
            if d.height < MIN_EXTENT || d.width < MIN_EXTENT {
                return Err(Error::invalid(format!(
                    "{name} view {d} too small to contain patterns (minimum {MIN_EXTENT}x{MIN_EXTENT})"
                )));
            }
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::invalid(format!(
                "noise_level must be finite and non-negative, got {}",
                self.noise_level
            )));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

fn finish(raw: Vec<f64>, noise: Option<&Normal<f64>>, r: &mut rng::Rng, dims: Dims) -> Image {
    let pixels = raw
        .into_iter()
        .map(|v| {
            let n = noise.map_or(0.0, |nd| nd.sample(r));
            // stored as f32 so persisted datasets reload bit-identically
            (v + n).clamp(0.0, 1.0) as f32
        })
        .collect();
    Image::new(dims, pixels).expect("clamped pixels")
}

/// Generate `counts[c]` samples per class, class-major, deterministic in `seed`.
pub fn generate(cfg: &GenerateConfig) -> Result<Vec<MultiViewSample>> {
    cfg.validate()?;
    let labels: Vec<Class> = Class::ALL
        .iter()
        .zip(cfg.counts)
        .flat_map(|(&c, n)| std::iter::repeat_n(c, n))
        .collect();
    let banks: Vec<_> = Class::ALL
        .iter()
        .map(|&c| (main_bank(c, cfg.main_dims), top_bank(c, cfg.top_dims)))
        .collect();
    let noise = (cfg.noise_level > 0.0)
        .then(|| Normal::new(0.0, cfg.noise_level).expect("valid sigma"));

    let samples = labels
        .par_iter()
        .enumerate()
        .map(|(id, &label)| {
            let mut r = rng::stream(cfg.seed, rng::DATA, &[id as u64]);
            let (mains, tops) = &banks[label.index()];
            let mp = mains[r.random_range(0..mains.len())];
            let tp = tops[r.random_range(0..tops.len())];
            let main_view = finish(render_main(mp, cfg.main_dims), noise.as_ref(), &mut r, cfg.main_dims);
            let top_view = finish(render_top(tp, cfg.top_dims), noise.as_ref(), &mut r, cfg.top_dims);
            MultiViewSample {
                id,
                main_view,
                top_view,
                label,
            }
        })
        .collect();
    Ok(samples)
}
