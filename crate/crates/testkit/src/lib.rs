//! Oracles written independently of the code they check.
//!
//! Finite differences only call forward evaluation; the KL and softmax
//! helpers are direct formulas on `f64`; the template classifier enumerates
//! the generator's pattern banks by brute force.

use mvfd::dataset::patterns::{main_bank, render_main, render_top, top_bank};
use mvfd::dataset::{Class, Dims, MultiViewSample};
use mvfd::distill::SoftTargets;
use mvfd::model::Model;
use mvfd::numerics::{apply_op, backward_op, forward_op, OpKind, Tensor};
use mvfd::trainer::{batch_loss_and_grad, TrainConfig};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub fn softmax_direct(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `sum p ln(p / q)` with no clamping.
pub fn kl_direct(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum()
}

pub fn random_tensor(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Largest relative error between `backward_op` and central differences of
/// `<upstream, op(inputs, params)>`, over every input and parameter entry.
pub fn check_op(kind: OpKind, inputs: &[Tensor<f64>], params: &[Tensor<f64>], upstream: &Tensor<f64>, floor: f64) -> f64 {
    let ins: Vec<&Tensor<f64>> = inputs.iter().collect();
    let ps: Vec<&Tensor<f64>> = params.iter().collect();
    let (_, saved) = forward_op(kind, &ins, &ps).unwrap();
    let g = backward_op(kind, Some(&saved), upstream).unwrap();
    let scalar = |ins: &[Tensor<f64>], ps: &[Tensor<f64>]| -> f64 {
        let a: Vec<&Tensor<f64>> = ins.iter().collect();
        let b: Vec<&Tensor<f64>> = ps.iter().collect();
        let y = apply_op(kind, &a, &b).unwrap();
        y.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
    };
    let mut worst: f64 = 0.0;
    for (slot, analytic) in g.inputs.iter().enumerate() {
        for j in 0..inputs[slot].len() {
            let mut f = |x: &[f64]| {
                let mut v = inputs.to_vec();
                v[slot] = Tensor::new(inputs[slot].shape().to_vec(), x.to_vec()).unwrap();
                scalar(&v, params)
            };
            let n = central_diff(&mut f, inputs[slot].data(), j, FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], n, floor));
        }
    }
    for (slot, analytic) in g.params.iter().enumerate() {
        for j in 0..params[slot].len() {
            let mut f = |x: &[f64]| {
                let mut v = params.to_vec();
                v[slot] = Tensor::new(params[slot].shape().to_vec(), x.to_vec()).unwrap();
                scalar(inputs, &v)
            };
            let n = central_diff(&mut f, params[slot].data(), j, FD_STEP);
            worst = worst.max(rel_err(analytic.data()[j], n, floor));
        }
    }
    worst
}

/// Soft targets from the model's current outputs, to be held fixed while
/// parameters are perturbed.
pub fn frozen_targets(model: &Model<f64>, batch: &[MultiViewSample], cfg: &TrainConfig) -> Vec<SoftTargets<f64>> {
    batch
        .iter()
        .map(|s| {
            let f = model.forward_train(s).unwrap();
            SoftTargets::from_logits(&f.logits.main, f.logits.top.as_deref(), &cfg.distill()).unwrap()
        })
        .collect()
}

/// Per parameter tensor: name and the largest relative error between the
/// analytic batch gradient and central differences of the batch loss.
pub fn check_model(model: &Model<f64>, batch: &[MultiViewSample], cfg: &TrainConfig, floor: f64) -> Vec<(String, f64)> {
    let targets = frozen_targets(model, batch, cfg);
    let (_, grads, _) = batch_loss_and_grad(model, batch, cfg, Some(&targets)).unwrap();
    let loss_at = |m: &Model<f64>| batch_loss_and_grad(m, batch, cfg, Some(&targets)).unwrap().0.total;
    model
        .params()
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let mut worst: f64 = 0.0;
            for j in 0..p.tensor.len() {
                let mut f = |x: &[f64]| {
                    let mut m = model.clone();
                    m.params_mut()[pi].tensor.data_mut()[j] = x[j];
                    loss_at(&m)
                };
                let n = central_diff(&mut f, p.tensor.data(), j, FD_STEP);
                worst = worst.max(rel_err(grads[pi].data()[j], n, floor));
            }
            (p.name.clone(), worst)
        })
        .collect()
}

fn sq_dist(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (f64::from(x) - y).powi(2)).sum()
}

/// Class of the nearest noise-free main-view rendering; ties go to the lowest class.
pub fn nearest_main(sample: &MultiViewSample) -> Class {
    let d = sample.main_view.dims();
    nearest(|c| main_bank(c, d).into_iter().map(|p| sq_dist(sample.main_view.pixels(), &render_main(p, d))).fold(f64::INFINITY, f64::min))
}

/// Class minimising the summed best-template distance over both views.
pub fn nearest_two_view(sample: &MultiViewSample) -> Class {
    let (dm, dt) = (sample.main_view.dims(), sample.top_view.dims());
    nearest(|c| {
        let m = main_bank(c, dm).into_iter().map(|p| sq_dist(sample.main_view.pixels(), &render_main(p, dm))).fold(f64::INFINITY, f64::min);
        let t = top_bank(c, dt).into_iter().map(|p| sq_dist(sample.top_view.pixels(), &render_top(p, dt))).fold(f64::INFINITY, f64::min);
        m + t
    })
}

fn nearest(mut score: impl FnMut(Class) -> f64) -> Class {
    let mut best = (Class::Normal, f64::INFINITY);
    for c in Class::ALL {
        let s = score(c);
        if s < best.1 {
            best = (c, s);
        }
    }
    best.0
}

/// Same extents for both views, as small as the generator allows.
pub fn small_dims() -> (Dims, Dims) {
    (Dims::new(16, 16), Dims::new(16, 16))
}
