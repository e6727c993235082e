//! The fixed differentiable op vocabulary.
//!
//! Shapes per kind:
//! - `Conv2d`: input `[C, H, W]`, params `[weight [O, C, k, k], bias [O]]`,
//!   output `[O, (H + 2p - k)/s + 1, (W + 2p - k)/s + 1]` (zero padding).
//! - `Affine`: input `[n]`, params `[weight [m, n], bias [m]]`, output `[m]`.
//! - `Relu`: any shape, unchanged.
//! - `GlobalAvgPool`: input `[C, H, W]`, output `[C]`.
//! - `WeightedSum`: inputs `[w [k], x_1, .., x_k]` with all `x_i` the same
//!   shape, output `sum_i w_i x_i` in that shape.
//! - `Softmax`, `LogSoftmax`: input `[n]`, output `[n]`.

use super::Tensor;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Conv2d { stride: usize, padding: usize },
    Affine,
    Relu,
    GlobalAvgPool,
    WeightedSum,
    Softmax,
    LogSoftmax,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Affine => "affine",
            OpKind::Relu => "relu",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::WeightedSum => "weighted_sum",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
        }
    }
}

/// Everything `backward_op` needs from the matching forward evaluation.
#[derive(Debug, Clone)]
pub struct SavedState<S> {
    kind: OpKind,
    inputs: Vec<Tensor<S>>,
    params: Vec<Tensor<S>>,
    output: Tensor<S>,
}

impl<S: Scalar> SavedState<S> {
    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn output(&self) -> &Tensor<S> {
        &self.output
    }
}

/// Gradients of one op, aligned with its `inputs` and `params` lists.
#[derive(Debug, Clone)]
pub struct OpGrads<S> {
    pub inputs: Vec<Tensor<S>>,
    pub params: Vec<Tensor<S>>,
}

pub fn conv_out_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 || extent + 2 * padding < kernel {
        return None;
    }
    Some((extent + 2 * padding - kernel) / stride + 1)
}

fn expect_arity<S>(
    kind: OpKind,
    inputs: &[&Tensor<S>],
    params: &[&Tensor<S>],
    n_in: usize,
    n_par: usize,
) -> Result<()> {
    if inputs.len() != n_in || params.len() != n_par {
        return Err(Error::shape(
            kind.name(),
            format!(
                "expected {n_in} inputs and {n_par} params, got {} and {}",
                inputs.len(),
                params.len()
            ),
        ));
    }
    Ok(())
}

/// Evaluate an op without retaining state.
pub fn apply_op<S: Scalar>(kind: OpKind, inputs: &[&Tensor<S>], params: &[&Tensor<S>]) -> Result<Tensor<S>> {
    match kind {
        OpKind::Conv2d { stride, padding } => {
            expect_arity(kind, inputs, params, 1, 2)?;
            conv2d_forward(inputs[0], params[0], params[1], stride, padding)
        }
        OpKind::Affine => {
            expect_arity(kind, inputs, params, 1, 2)?;
            affine_forward(inputs[0], params[0], params[1])
        }
        OpKind::Relu => {
            expect_arity(kind, inputs, params, 1, 0)?;
            Ok(inputs[0].map(|x| if x > S::zero() || x.is_nan() { x } else { S::zero() }))
        }
        OpKind::GlobalAvgPool => {
            expect_arity(kind, inputs, params, 1, 0)?;
            gap_forward(inputs[0])
        }
        OpKind::WeightedSum => {
            if !params.is_empty() {
                return Err(Error::shape(kind.name(), "takes no params"));
            }
            weighted_sum_forward(inputs)
        }
        OpKind::Softmax | OpKind::LogSoftmax => {
            expect_arity(kind, inputs, params, 1, 0)?;
            let x = inputs[0];
            if x.shape().len() != 1 {
                return Err(Error::shape(
                    kind.name(),
                    format!("expected a vector, got {:?}", x.shape()),
                ));
            }
            let out = if kind == OpKind::Softmax {
                softmax_vec(x.data())
            } else {
                log_softmax_vec(x.data())
            };
            Ok(Tensor::vector(out))
        }
    }
}

/// Evaluate an op and keep the state its backward pass needs.
pub fn forward_op<S: Scalar>(
    kind: OpKind,
    inputs: &[&Tensor<S>],
    params: &[&Tensor<S>],
) -> Result<(Tensor<S>, SavedState<S>)> {
    let output = apply_op(kind, inputs, params)?;
    let saved = SavedState {
        kind,
        inputs: inputs.iter().map(|t| (*t).clone()).collect(),
        params: params.iter().map(|t| (*t).clone()).collect(),
        output: output.clone(),
    };
    Ok((output, saved))
}

/// Contract `upstream` (dL/d output) with the op's local Jacobian.
pub fn backward_op<S: Scalar>(
    kind: OpKind,
    saved: Option<&SavedState<S>>,
    upstream: &Tensor<S>,
) -> Result<OpGrads<S>> {
    let saved = saved.ok_or(Error::MissingState { op: kind.name() })?;
    if saved.kind != kind {
        return Err(Error::invalid(format!(
            "backward for {} given state saved by {}",
            kind.name(),
            saved.kind.name()
        )));
    }
    if upstream.shape() != saved.output.shape() {
        return Err(Error::shape(
            kind.name(),
            format!(
                "upstream {:?} vs output {:?}",
                upstream.shape(),
                saved.output.shape()
            ),
        ));
    }
    let g = upstream.data();
    match kind {
        OpKind::Conv2d { stride, padding } => {
            let (gx, gw, gb) = conv2d_backward(
                &saved.inputs[0],
                &saved.params[0],
                upstream,
                stride,
                padding,
            );
            Ok(OpGrads {
                inputs: vec![gx],
                params: vec![gw, gb],
            })
        }
        OpKind::Affine => {
            let x = saved.inputs[0].data();
            let w = &saved.params[0];
            let (m, n) = (w.shape()[0], w.shape()[1]);
            let wd = w.data();
            let mut gx = vec![S::zero(); n];
            let mut gw = vec![S::zero(); m * n];
            for i in 0..m {
                let gi = g[i];
                let row = &wd[i * n..(i + 1) * n];
                for j in 0..n {
                    gx[j] += gi * row[j];
                    gw[i * n + j] = gi * x[j];
                }
            }
            Ok(OpGrads {
                inputs: vec![Tensor::vector(gx)],
                params: vec![Tensor::new(vec![m, n], gw)?, Tensor::vector(g.to_vec())],
            })
        }
        OpKind::Relu => {
            let x = saved.inputs[0].data();
            let gx = x
                .iter()
                .zip(g)
                .map(|(&xi, &gi)| if xi > S::zero() { gi } else { S::zero() })
                .collect();
            Ok(OpGrads {
                inputs: vec![Tensor::new(saved.inputs[0].shape().to_vec(), gx)?],
                params: vec![],
            })
        }
        OpKind::GlobalAvgPool => {
            let shape = saved.inputs[0].shape();
            let hw = shape[1] * shape[2];
            let inv = S::one() / S::lit(hw as f64);
            let mut gx = Vec::with_capacity(shape[0] * hw);
            for &gc in g {
                gx.extend(std::iter::repeat_n(gc * inv, hw));
            }
            Ok(OpGrads {
                inputs: vec![Tensor::new(shape.to_vec(), gx)?],
                params: vec![],
            })
        }
        OpKind::WeightedSum => {
            let w = saved.inputs[0].data();
            let xs = &saved.inputs[1..];
            let gw: Vec<S> = xs
                .iter()
                .map(|x| x.data().iter().zip(g).map(|(&a, &b)| a * b).sum())
                .collect();
            let mut grads = vec![Tensor::vector(gw)];
            for (i, x) in xs.iter().enumerate() {
                grads.push(Tensor::new(
                    x.shape().to_vec(),
                    g.iter().map(|&gi| gi * w[i]).collect(),
                )?);
            }
            Ok(OpGrads {
                inputs: grads,
                params: vec![],
            })
        }
        OpKind::Softmax => {
            let p = saved.output.data();
            let dot: S = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
            let gx = p.iter().zip(g).map(|(&pi, &gi)| pi * (gi - dot)).collect();
            Ok(OpGrads {
                inputs: vec![Tensor::vector(gx)],
                params: vec![],
            })
        }
        OpKind::LogSoftmax => {
            let ls = saved.output.data();
            let gsum: S = g.iter().copied().sum();
            let gx = ls
                .iter()
                .zip(g)
                .map(|(&l, &gi)| gi - l.exp() * gsum)
                .collect();
            Ok(OpGrads {
                inputs: vec![Tensor::vector(gx)],
                params: vec![],
            })
        }
    }
}

pub(crate) fn softmax_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_softmax_vec<S: Scalar>(x: &[S]) -> Vec<S> {
    let lse = log_sum_exp(x);
    x.iter().map(|&v| v - lse).collect()
}

pub fn log_sum_exp<S: Scalar>(x: &[S]) -> S {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let sum: S = x.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

fn conv_shapes<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("input {xs:?} must be [C,H,W], weight {ws:?} must be [O,C,k,k]"),
        ));
    }
    let (c, h, wd) = (xs[0], xs[1], xs[2]);
    let (o, wc, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
    if wc != c || k != k2 || b.shape() != [o] {
        return Err(Error::shape(
            "conv2d",
            format!("input {xs:?}, weight {ws:?}, bias {:?}", b.shape()),
        ));
    }
    let ho = conv_out_extent(h, k, stride, padding);
    let wo = conv_out_extent(wd, k, stride, padding);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok((c, h, wd, o, k, ho, wo)),
        _ => Err(Error::shape(
            "conv2d",
            format!("input {xs:?} too small for kernel {k} stride {stride} padding {padding}"),
        )),
    }
}

/// Patch matrix with one row per output pixel and `c * k * k` columns;
/// out-of-bounds taps are zero.
fn im2col<S: Scalar>(xd: &[S], c: usize, h: usize, wd: usize, k: usize, ho: usize, wo: usize, stride: usize, padding: usize) -> Vec<S> {
    let q = c * k * k;
    let mut cols = vec![S::zero(); ho * wo * q];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * q..(oy * wo + ox + 1) * q];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    for ic in 0..c {
                        row[ic * k * k + ky * k + kx] = xd[ic * h * wd + iy as usize * wd + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

fn axpy<S: Scalar>(alpha: S, x: &[S], y: &mut [S]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn conv2d_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let (c, h, wd, o, k, ho, wo) = conv_shapes(x, w, b, stride, padding)?;
    let q = c * k * k;
    let cols = im2col(x.data(), c, h, wd, k, ho, wo, stride, padding);
    let (wdata, bd) = (w.data(), b.data());
    let mut out = vec![S::zero(); o * ho * wo];
    for oc in 0..o {
        let kern = &wdata[oc * q..(oc + 1) * q];
        let plane = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
        for (p, v) in plane.iter_mut().enumerate() {
            *v = bd[oc] + dot(kern, &cols[p * q..(p + 1) * q]);
        }
    }
    Tensor::new(vec![o, ho, wo], out)
}

fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    upstream: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let (ho, wo) = (upstream.shape()[1], upstream.shape()[2]);
    let q = c * k * k;
    let cols = im2col(x.data(), c, h, wd, k, ho, wo, stride, padding);
    let (wdata, g) = (w.data(), upstream.data());
    let mut gcols = vec![S::zero(); ho * wo * q];
    let mut gw = vec![S::zero(); o * q];
    let mut gb = vec![S::zero(); o];
    for oc in 0..o {
        let gplane = &g[oc * ho * wo..(oc + 1) * ho * wo];
        gb[oc] = gplane.iter().copied().sum();
        let kern = &wdata[oc * q..(oc + 1) * q];
        for (p, &go) in gplane.iter().enumerate() {
            if go == S::zero() {
                continue;
            }
            axpy(go, &cols[p * q..(p + 1) * q], &mut gw[oc * q..(oc + 1) * q]);
            axpy(go, kern, &mut gcols[p * q..(p + 1) * q]);
        }
    }
    let mut gx = vec![S::zero(); c * h * wd];
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &gcols[(oy * wo + ox) * q..(oy * wo + ox + 1) * q];
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - padding as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - padding as isize;
                    if ix < 0 || ix >= wd as isize {
                        continue;
                    }
                    for ic in 0..c {
                        gx[ic * h * wd + iy as usize * wd + ix as usize] += row[ic * k * k + ky * k + kx];
                    }
                }
            }
        }
    }
    (
        Tensor::new(vec![c, h, wd], gx).expect("input shape"),
        Tensor::new(vec![o, c, k, k], gw).expect("weight shape"),
        Tensor::vector(gb),
    )
}

fn affine_forward<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let ws = w.shape();
    if x.shape().len() != 1 || ws.len() != 2 || ws[1] != x.len() || b.shape() != [ws[0]] {
        return Err(Error::shape(
            "affine",
            format!(
                "input {:?}, weight {ws:?}, bias {:?}",
                x.shape(),
                b.shape()
            ),
        ));
    }
    let (m, n) = (ws[0], ws[1]);
    let (xd, wd, bd) = (x.data(), w.data(), b.data());
    let out = (0..m)
        .map(|i| {
            wd[i * n..(i + 1) * n]
                .iter()
                .zip(xd)
                .fold(bd[i], |acc, (&a, &b)| acc + a * b)
        })
        .collect();
    Ok(Tensor::vector(out))
}

fn gap_forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape(
            "global_avg_pool",
            format!("expected [C,H,W], got {s:?}"),
        ));
    }
    let hw = s[1] * s[2];
    let inv = S::one() / S::lit(hw as f64);
    let out = x
        .data()
        .chunks(hw)
        .map(|ch| ch.iter().copied().sum::<S>() * inv)
        .collect();
    Ok(Tensor::vector(out))
}

fn weighted_sum_forward<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let Some((w, xs)) = inputs.split_first() else {
        return Err(Error::shape("weighted_sum", "no inputs"));
    };
    if w.shape() != [xs.len()] || xs.is_empty() {
        return Err(Error::shape(
            "weighted_sum",
            format!("weights {:?} for {} operands", w.shape(), xs.len()),
        ));
    }
    let shape = xs[0].shape();
    if let Some(bad) = xs.iter().find(|x| x.shape() != shape) {
        return Err(Error::shape(
            "weighted_sum",
            format!("operand {:?} vs {:?}", bad.shape(), shape),
        ));
    }
    let mut out = vec![S::zero(); xs[0].len()];
    for (&wi, x) in w.data().iter().zip(xs) {
        for (o, &v) in out.iter_mut().zip(x.data()) {
            *o += wi * v;
        }
    }
    Tensor::new(shape.to_vec(), out)
}
