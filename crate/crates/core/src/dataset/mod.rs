//! Synthetic two-view dataset: generation, stratified splitting, up-sampling,
//! augmentation, and the on-disk format.

mod augment;
mod generate;
mod io;
pub mod patterns;
mod split;

pub use augment::{augment, flip_horizontal, resize, AugmentPolicy, ExtraAugment};
pub use generate::{generate, GenerateConfig, DEFAULT_COUNTS};
pub use io::{load_dataset, save_dataset, Manifest, FORMAT_VERSION, SAMPLE_MAGIC};
pub use split::{rebalance, split, DatasetSplit, SplitRatios};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Distress class. Discriminants are the label values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Normal = 0,
    Crack = 1,
    Void = 2,
    Disengaging = 3,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::Normal, Class::Crack, Class::Void, Class::Disengaging];

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::invalid(format!("class index {i} out of range 0..4")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Normal => "Normal",
            Class::Crack => "Crack",
            Class::Void => "Void",
            Class::Disengaging => "Disengaging",
        }
    }
}

/// Height and width of one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// Single-channel image, row-major, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: Dims,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(dims: Dims, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != dims.area() {
            return Err(Error::shape(
                "image",
                format!("{dims} needs {} pixels, got {}", dims.area(), pixels.len()),
            ));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { dims, pixels })
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            pixels: vec![value; dims.area()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.dims.width + col]
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    /// Squared L2 distance; panics on dimension mismatch.
    pub fn sq_distance(&self, other: &Image) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| {
                let d = f64::from(a) - f64::from(b);
                d * d
            })
            .sum()
    }
}

/// One sample: main view (depth x travel), top view (width x travel), label.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewSample {
    /// Position in the generated set; not part of the persisted payload.
    pub id: usize,
    pub main_view: Image,
    pub top_view: Image,
    pub label: Class,
}

pub fn class_counts(samples: &[MultiViewSample]) -> [usize; 4] {
    let mut counts = [0; 4];
    for s in samples {
        counts[s.label.index()] += 1;
    }
    counts
}
