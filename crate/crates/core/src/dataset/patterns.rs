//! Noise-free pattern families for each class and view.
//!
//! Every pattern parameter is drawn from a finite grid, so the full set of
//! noise-free renderings per class is enumerable. Crack and Void draw their
//! main view from the same arc family and differ only in the top view.

use super::{Class, Dims};

const ARC_GAIN: f64 = 0.45;
const BAND_GAIN: f64 = 0.2;
const STREAK_GAIN: f64 = 0.45;
const BLOB_GAIN: f64 = 0.55;
const STAIN_GAIN: f64 = -0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MainPattern {
    Plain,
    /// Hyperbola-like reflection with apex at (row, col) and curvature scale.
    Arc { row: usize, col: usize, scale: usize },
    /// Faint two-row horizontal band.
    Band { row: usize, start: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopPattern {
    Plain,
    /// Thin bright line segment through (row, col); angle in multiples of 45 degrees.
    Streak { row: usize, col: usize, angle: u8 },
    /// Compact bright disc.
    Blob { row: usize, col: usize, radius: usize },
    /// Broad dark patch.
    Stain { row: usize, col: usize, radius: usize },
}

fn arc_scales(d: Dims) -> [usize; 3] {
    [(d.height / 16).max(1), (d.height / 10).max(2), (d.height / 6).max(3)]
}

fn centre_grid(d: Dims) -> impl Iterator<Item = (usize, usize)> {
    let rows = d.height / 4..3 * d.height / 4;
    let cols = d.width / 4..3 * d.width / 4;
    rows.flat_map(move |r| cols.clone().map(move |c| (r, c)))
}

fn streak_len(d: Dims) -> usize {
    2 * d.height.min(d.width) / 3
}

pub fn main_bank(class: Class, d: Dims) -> Vec<MainPattern> {
    match class {
        Class::Normal => vec![MainPattern::Plain],
        Class::Crack | Class::Void => {
            let mut v = Vec::new();
            for row in d.height / 8..d.height / 2 {
                for col in d.width / 4..3 * d.width / 4 {
                    for scale in arc_scales(d) {
                        v.push(MainPattern::Arc { row, col, scale });
                    }
                }
            }
            v
        }
        Class::Disengaging => {
            let mut v = Vec::new();
            for row in d.height / 3..3 * d.height / 4 {
                for start in [0, d.width / 8, d.width / 4] {
                    for len in [d.width / 2, 3 * d.width / 4] {
                        v.push(MainPattern::Band { row, start, len });
                    }
                }
            }
            v
        }
    }
}

pub fn top_bank(class: Class, d: Dims) -> Vec<TopPattern> {
    let m = d.height.min(d.width);
    match class {
        Class::Normal => vec![TopPattern::Plain],
        Class::Crack => centre_grid(d)
            .flat_map(|(row, col)| (0..4).map(move |angle| TopPattern::Streak { row, col, angle }))
            .collect(),
        Class::Void => centre_grid(d)
            .flat_map(|(row, col)| {
                [(m / 6).max(2), (m / 5).max(3)]
                    .into_iter()
                    .map(move |radius| TopPattern::Blob { row, col, radius })
            })
            .collect(),
        Class::Disengaging => centre_grid(d)
            .flat_map(|(row, col)| {
                [m / 4, m / 3]
                    .into_iter()
                    .map(move |radius| TopPattern::Stain { row, col, radius })
            })
            .collect(),
    }
}

/// Stratified ground layers in the depth direction.
pub fn main_background(d: Dims) -> Vec<f64> {
    let mut v = Vec::with_capacity(d.area());
    for r in 0..d.height {
        let layer = 0.30 + 0.06 * (2.0 * std::f64::consts::PI * r as f64 / 8.0).sin();
        v.extend(std::iter::repeat_n(layer, d.width));
    }
    v
}

pub fn top_background(d: Dims) -> Vec<f64> {
    let mut v = Vec::with_capacity(d.area());
    for _ in 0..d.height {
        for c in 0..d.width {
            v.push(0.35 + 0.04 * (2.0 * std::f64::consts::PI * c as f64 / 12.0).cos());
        }
    }
    v
}

fn ramp(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Background plus pattern, before noise and clamping.
pub fn render_main(p: MainPattern, d: Dims) -> Vec<f64> {
    let mut img = main_background(d);
    match p {
        MainPattern::Plain => {}
        MainPattern::Arc { row, col, scale } => {
            let a = scale as f64;
            for c in 0..d.width {
                let dx = c as f64 - col as f64;
                let y = row as f64 + (a * a + dx * dx).sqrt() - a;
                for r in 0..d.height {
                    let w = ramp(1.0 - (r as f64 - y).abs());
                    img[r * d.width + c] += ARC_GAIN * w;
                }
            }
        }
        MainPattern::Band { row, start, len } => {
            for r in row..(row + 2).min(d.height) {
                for c in start..(start + len).min(d.width) {
                    img[r * d.width + c] += BAND_GAIN;
                }
            }
        }
    }
    img
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let t = ((wx * vx + wy * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    (dx * dx + dy * dy).sqrt()
}

pub fn render_top(p: TopPattern, d: Dims) -> Vec<f64> {
    let mut img = top_background(d);
    let mut paint = |gain: f64, weight: &dyn Fn(f64, f64) -> f64| {
        for r in 0..d.height {
            for c in 0..d.width {
                img[r * d.width + c] += gain * weight(r as f64, c as f64);
            }
        }
    };
    match p {
        TopPattern::Plain => {}
        TopPattern::Streak { row, col, angle } => {
            let half = streak_len(d) as f64 / 2.0;
            let theta = f64::from(angle) * std::f64::consts::FRAC_PI_4;
            let (dr, dc) = (theta.sin() * half, theta.cos() * half);
            let (r0, c0) = (row as f64, col as f64);
            let a = (r0 - dr, c0 - dc);
            let b = (r0 + dr, c0 + dc);
            paint(STREAK_GAIN, &|r, c| ramp(1.0 - segment_distance((r, c), a, b)));
        }
        TopPattern::Blob { row, col, radius } => {
            let (r0, c0, rad) = (row as f64, col as f64, radius as f64);
            paint(BLOB_GAIN, &|r, c| {
                ramp(rad + 0.5 - ((r - r0).powi(2) + (c - c0).powi(2)).sqrt())
            });
        }
        TopPattern::Stain { row, col, radius } => {
            let (r0, c0, rad) = (row as f64, col as f64, radius as f64);
            paint(STAIN_GAIN, &|r, c| {
                ramp(rad + 0.5 - ((r - r0).powi(2) + (c - c0).powi(2)).sqrt())
            });
        }
    }
    img
}
