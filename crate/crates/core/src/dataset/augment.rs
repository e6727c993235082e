use rand::Rng as _;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use super::{Dims, Image, MultiViewSample};
use crate::{rng::Rng, Error, Result};

/// Augmentation applied on top of the base resize + flip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExtraAugment {
    None,
    /// Zero `count` randomly placed `hole x hole` squares in each view.
    Cutout { hole: usize, count: usize },
    /// Additive N(0, sigma^2) pixel noise, clamped to [0, 1].
    GaussianNoise { sigma: f64 },
    /// Random-erasing variant: one rectangle per view covering 2%..`max_area`
    /// of the image, aspect ratio in [0.3, 3.3], filled with uniform noise.
    RandomErase { max_area: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Resample each view to these dims (main, top) before anything else.
    #[serde(default)]
    pub resize: Option<(Dims, Dims)>,
    /// Probability of a horizontal flip, applied to both views or neither.
    pub flip_prob: f64,
    pub extra: ExtraAugment,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self::base()
    }
}

impl AugmentPolicy {
    /// Identity policy.
    pub fn none() -> Self {
        Self {
            resize: None,
            flip_prob: 0.0,
            extra: ExtraAugment::None,
        }
    }

    /// Resize (when dims are given) plus coupled random horizontal flip.
    pub fn base() -> Self {
        Self {
            resize: None,
            flip_prob: 0.5,
            extra: ExtraAugment::None,
        }
    }

    pub fn with_extra(mut self, extra: ExtraAugment) -> Self {
        self.extra = extra;
        self
    }

    pub fn validate(&self, main: Dims, top: Dims) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid(format!("flip_prob {} not in [0, 1]", self.flip_prob)));
        }
        let (main, top) = self.resize.unwrap_or((main, top));
        match self.extra {
            ExtraAugment::Cutout { hole, count } => {
                let fits = |d: Dims| hole <= d.height && hole <= d.width;
                if hole == 0 || count == 0 || !fits(main) || !fits(top) {
                    return Err(Error::invalid(format!(
                        "cutout hole {hole}x{hole} (count {count}) must be non-empty and fit in {main} and {top}"
                    )));
                }
            }
            ExtraAugment::GaussianNoise { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return Err(Error::invalid(format!("noise sigma {sigma} must be >= 0")));
            }
            ExtraAugment::RandomErase { max_area } if !(0.02..=1.0).contains(&max_area) => {
                return Err(Error::invalid(format!("random erase max_area {max_area} not in [0.02, 1]")));
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn flip_horizontal(img: &Image) -> Image {
    let d = img.dims();
    let mut out = img.clone();
    for (dst, src) in out
        .pixels_mut()
        .chunks_mut(d.width)
        .zip(img.pixels().chunks(d.width))
    {
        for (o, &v) in dst.iter_mut().zip(src.iter().rev()) {
            *o = v;
        }
    }
    out
}

/// Bilinear resampling with aligned corners; identity when dims already match.
pub fn resize(img: &Image, to: Dims) -> Image {
    let from = img.dims();
    if from == to {
        return img.clone();
    }
    let scale = |n_from: usize, n_to: usize| {
        if n_to > 1 {
            (n_from - 1) as f64 / (n_to - 1) as f64
        } else {
            0.0
        }
    };
    let (sy, sx) = (scale(from.height, to.height), scale(from.width, to.width));
    let mut px = Vec::with_capacity(to.area());
    for r in 0..to.height {
        let y = r as f64 * sy;
        let (y0, fy) = (y.floor() as usize, y.fract());
        let y1 = (y0 + 1).min(from.height - 1);
        for c in 0..to.width {
            let x = c as f64 * sx;
            let (x0, fx) = (x.floor() as usize, x.fract());
            let x1 = (x0 + 1).min(from.width - 1);
            let v = |rr, cc| f64::from(img.get(rr, cc));
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bot = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            px.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0) as f32);
        }
    }
    Image::new(to, px).expect("resampled pixels in range")
}

fn fill_rect(img: &mut Image, r0: usize, c0: usize, h: usize, w: usize, mut value: impl FnMut() -> f32) {
    let width = img.dims().width;
    let px = img.pixels_mut();
    for r in r0..r0 + h {
        for c in c0..c0 + w {
            px[r * width + c] = value();
        }
    }
}

fn cutout(img: &mut Image, hole: usize, count: usize, rng: &mut Rng) {
    let d = img.dims();
    let hole_h = hole.min(d.height);
    let hole_w = hole.min(d.width);
    for _ in 0..count {
        let r0 = rng.random_range(0..=d.height - hole_h);
        let c0 = rng.random_range(0..=d.width - hole_w);
        fill_rect(img, r0, c0, hole_h, hole_w, || 0.0);
    }
}

fn gaussian_noise(img: &mut Image, sigma: f64, rng: &mut Rng) {
    if sigma == 0.0 {
        return;
    }
    let nd = Normal::new(0.0, sigma).expect("valid sigma");
    for p in img.pixels_mut() {
        *p = (f64::from(*p) + nd.sample(rng)).clamp(0.0, 1.0) as f32;
    }
}

fn random_erase(img: &mut Image, max_area: f64, rng: &mut Rng) {
    let d = img.dims();
    let area = d.area() as f64 * rng.random_range(0.02..=max_area.max(0.02));
    let aspect = rng.random_range(0.3f64..=3.3);
    let h = ((area * aspect).sqrt().round() as usize).clamp(1, d.height);
    let w = ((area / aspect).sqrt().round() as usize).clamp(1, d.width);
    let r0 = rng.random_range(0..=d.height - h);
    let c0 = rng.random_range(0..=d.width - w);
    fill_rect(img, r0, c0, h, w, || rng.random::<f32>());
}

/// Apply `policy` to both views. The flip coin is shared by the two views
/// (they share the travel axis); the extra augmentation is drawn per view.
pub fn augment(sample: &MultiViewSample, policy: &AugmentPolicy, rng: &mut Rng) -> MultiViewSample {
    let mut main = sample.main_view.clone();
    let mut top = sample.top_view.clone();
    if let Some((dm, dt)) = policy.resize {
        main = resize(&main, dm);
        top = resize(&top, dt);
    }
    if policy.flip_prob > 0.0 && rng.random_bool(policy.flip_prob) {
        main = flip_horizontal(&main);
        top = flip_horizontal(&top);
    }
    for view in [&mut main, &mut top] {
        match policy.extra {
            ExtraAugment::None => {}
            ExtraAugment::Cutout { hole, count } => cutout(view, hole, count, rng),
            ExtraAugment::GaussianNoise { sigma } => gaussian_noise(view, sigma, rng),
            ExtraAugment::RandomErase { max_area } => random_erase(view, max_area, rng),
        }
    }
    MultiViewSample {
        id: sample.id,
        main_view: main,
        top_view: top,
        label: sample.label,
    }
}
