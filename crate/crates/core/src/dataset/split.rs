use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use super::{class_counts, flip_horizontal, Class, MultiViewSample};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios {r:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<MultiViewSample>,
    pub validation: Vec<MultiViewSample>,
    pub test: Vec<MultiViewSample>,
    pub seed: u64,
}

/// Stratified split: each class is shuffled and cut at the rounded ratio
/// boundaries, so every split holds each class within one sample of its share.
pub fn split(samples: &[MultiViewSample], ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    let counts = class_counts(samples);
    let mut out = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for class in Class::ALL {
        let n = counts[class.index()];
        if n == 0 {
            continue;
        }
        if n < 3 {
            return Err(Error::invalid(format!(
                "class {} has {n} samples; stratified split needs at least 3",
                class.name()
            )));
        }
        let mut members: Vec<&MultiViewSample> = samples.iter().filter(|s| s.label == class).collect();
        members.shuffle(&mut rng::stream(seed, rng::SPLIT, &[class.index() as u64]));
        let n_train = ((n as f64 * ratios.train).round() as usize).min(n);
        let n_val = ((n as f64 * ratios.validation).round() as usize).min(n - n_train);
        let (tr, rest) = members.split_at(n_train);
        let (va, te) = rest.split_at(n_val);
        out.train.extend(tr.iter().map(|s| (*s).clone()));
        out.validation.extend(va.iter().map(|s| (*s).clone()));
        out.test.extend(te.iter().map(|s| (*s).clone()));
    }
    Ok(out)
}

const REBALANCE_JITTER: f64 = 0.02;

// Coupled flip plus small pixel jitter; retried until it differs from `src`.
fn rebalance_copy(src: &MultiViewSample, rng: &mut rng::Rng) -> MultiViewSample {
    let jitter = Normal::new(0.0, REBALANCE_JITTER).expect("valid sigma");
    for _ in 0..8 {
        let mut main = flip_horizontal(&src.main_view);
        let mut top = flip_horizontal(&src.top_view);
        for p in main.pixels_mut().iter_mut().chain(top.pixels_mut()) {
            *p = (f64::from(*p) + jitter.sample(rng)).clamp(0.0, 1.0) as f32;
        }
        if main != src.main_view || top != src.top_view {
            return MultiViewSample {
                id: src.id,
                main_view: main,
                top_view: top,
                label: src.label,
            };
        }
    }
    // only reachable for saturated, symmetric images
    let mut copy = src.clone();
    let p = &mut copy.main_view.pixels_mut()[0];
    *p = if *p < 0.5 { *p + 0.01 } else { *p - 0.01 };
    copy
}

/// Up-sample every class to the majority count with augmented copies of
/// randomly chosen originals from the same class. Originals come first,
/// in input order.
pub fn rebalance(train: &[MultiViewSample], rng: &mut rng::Rng) -> Vec<MultiViewSample> {
    let counts = class_counts(train);
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut out = train.to_vec();
    for class in Class::ALL {
        let pool: Vec<&MultiViewSample> = train.iter().filter(|s| s.label == class).collect();
        if pool.is_empty() {
            continue;
        }
        for _ in pool.len()..target {
            let src = pool[rng.random_range(0..pool.len())];
            out.push(rebalance_copy(src, rng));
        }
    }
    out
}
