use super::params::{Model, Pair};
use super::{FusionMode, Head};
use crate::dataset::{Image, MultiViewSample};
use crate::numerics::{backward_op, forward_op, softmax, Distribution, OpKind, SavedState, Tensor};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<S> {
    pub h_main: Vec<S>,
    /// Absent for single-view models.
    pub h_top: Option<Vec<S>>,
    pub h_fused: Option<Vec<S>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights<S> {
    pub alpha_main: S,
    pub alpha_top: S,
}

/// Raw head outputs before softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLogits<S> {
    pub main: Vec<S>,
    pub top: Option<Vec<S>>,
    pub fused: Option<Vec<S>>,
}

impl<S: Scalar> HeadLogits<S> {
    pub fn get(&self, head: Head) -> Option<&[S]> {
        match head {
            Head::Main => Some(&self.main),
            Head::Top => self.top.as_deref(),
            Head::Fused => self.fused.as_deref(),
        }
    }
}

/// Head distributions y1 (main), y2 (top), y3 (fused).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTriple<S> {
    pub y1: Distribution<S>,
    pub y2: Option<Distribution<S>>,
    pub y3: Option<Distribution<S>>,
}

impl<S: Scalar> PredictionTriple<S> {
    pub fn from_logits(l: &HeadLogits<S>) -> Result<Self> {
        Ok(Self {
            y1: Distribution::from_logits(&l.main)?,
            y2: l.top.as_deref().map(Distribution::from_logits).transpose()?,
            y3: l.fused.as_deref().map(Distribution::from_logits).transpose()?,
        })
    }

    /// The distribution used for the final decision: y3, or y1 without fusion.
    pub fn decision(&self) -> &Distribution<S> {
        self.y3.as_ref().unwrap_or(&self.y1)
    }
}

#[derive(Debug, Clone)]
struct MlpTrace<S> {
    fc1: SavedState<S>,
    relu: SavedState<S>,
    fc2: SavedState<S>,
}

#[derive(Debug, Clone)]
struct BranchTrace<S> {
    // conv, relu pairs followed by the pooling op
    convs: Vec<(SavedState<S>, SavedState<S>)>,
    pool: SavedState<S>,
}

#[derive(Debug, Clone)]
struct FusionTrace<S> {
    // attention scores for (main, top) and their softmax; absent for Sum
    attention: Option<(MlpTrace<S>, MlpTrace<S>, SavedState<S>)>,
    combine: SavedState<S>,
}

/// Saved forward state for one sample.
#[derive(Debug, Clone)]
pub struct Trace<S> {
    main: BranchTrace<S>,
    top: Option<BranchTrace<S>>,
    fusion: Option<FusionTrace<S>>,
    heads: [Option<MlpTrace<S>>; 3],
}

/// Result of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct Forward<S> {
    pub features: FeatureSet<S>,
    pub fusion: Option<FusionWeights<S>>,
    pub logits: HeadLogits<S>,
    pub trace: Trace<S>,
}

fn image_tensor<S: Scalar>(img: &Image, mean: f64, std: f64) -> Tensor<S> {
    let d = img.dims();
    Tensor::new(
        vec![1, d.height, d.width],
        img.pixels().iter().map(|&p| S::lit((f64::from(p) - mean) / std)).collect(),
    )
    .expect("image extents are positive")
}

impl<S: Scalar> Model<S> {
    fn input(&self, img: &Image) -> Tensor<S> {
        image_tensor(img, self.config().input_mean, self.config().input_std)
    }

    fn conv_kind(&self) -> OpKind {
        OpKind::Conv2d {
            stride: self.config().stride,
            padding: self.config().padding,
        }
    }

    fn branch_forward(&self, layers: &[Pair], input: Tensor<S>) -> Result<(Vec<S>, BranchTrace<S>)> {
        let mut x = input;
        let mut convs = Vec::with_capacity(layers.len());
        for p in layers {
            let (y, sc) = forward_op(self.conv_kind(), &[&x], &[self.t(p.w), self.t(p.b)])?;
            let (z, sr) = forward_op(OpKind::Relu, &[&y], &[])?;
            convs.push((sc, sr));
            x = z;
        }
        let (h, pool) = forward_op(OpKind::GlobalAvgPool, &[&x], &[])?;
        Ok((h.into_data(), BranchTrace { convs, pool }))
    }

    fn branch_backward(&self, layers: &[Pair], trace: &BranchTrace<S>, grad_h: Vec<S>, grads: &mut [Tensor<S>]) -> Result<()> {
        let mut g = backward_op(OpKind::GlobalAvgPool, Some(&trace.pool), &Tensor::vector(grad_h))?
            .inputs
            .remove(0);
        for (p, (sc, sr)) in layers.iter().zip(&trace.convs).rev() {
            let gr = backward_op(OpKind::Relu, Some(sr), &g)?.inputs.remove(0);
            let mut gc = backward_op(self.conv_kind(), Some(sc), &gr)?;
            grads[p.w].add_assign(&gc.params[0])?;
            grads[p.b].add_assign(&gc.params[1])?;
            g = gc.inputs.remove(0);
        }
        Ok(())
    }

    fn mlp_forward(&self, layers: &[Pair; 2], x: &[S]) -> Result<(Vec<S>, MlpTrace<S>)> {
        let x = Tensor::vector(x.to_vec());
        let (a, fc1) = forward_op(OpKind::Affine, &[&x], &[self.t(layers[0].w), self.t(layers[0].b)])?;
        let (r, relu) = forward_op(OpKind::Relu, &[&a], &[])?;
        let (y, fc2) = forward_op(OpKind::Affine, &[&r], &[self.t(layers[1].w), self.t(layers[1].b)])?;
        Ok((y.into_data(), MlpTrace { fc1, relu, fc2 }))
    }

    fn mlp_backward(&self, layers: &[Pair; 2], trace: &MlpTrace<S>, grad_y: Vec<S>, grads: &mut [Tensor<S>]) -> Result<Vec<S>> {
        let mut g2 = backward_op(OpKind::Affine, Some(&trace.fc2), &Tensor::vector(grad_y))?;
        grads[layers[1].w].add_assign(&g2.params[0])?;
        grads[layers[1].b].add_assign(&g2.params[1])?;
        let gr = backward_op(OpKind::Relu, Some(&trace.relu), &g2.inputs.remove(0))?.inputs.remove(0);
        let mut g1 = backward_op(OpKind::Affine, Some(&trace.fc1), &gr)?;
        grads[layers[0].w].add_assign(&g1.params[0])?;
        grads[layers[0].b].add_assign(&g1.params[1])?;
        Ok(g1.inputs.remove(0).into_data())
    }

    fn check_dims(&self, sample: &MultiViewSample) -> Result<()> {
        let c = self.config();
        for (view, got, want) in [
            ("main", sample.main_view.dims(), c.main_dims),
            ("top", sample.top_view.dims(), c.top_dims),
        ] {
            if got != want {
                return Err(Error::shape(
                    "extract_features",
                    format!("{view} view is {got}, model expects {want}"),
                ));
            }
        }
        Ok(())
    }

    /// `h_main = f1(main view)`, `h_top = f2(top view)`; `h_fused` is left empty.
    pub fn extract_features(&self, sample: &MultiViewSample) -> Result<FeatureSet<S>> {
        self.check_dims(sample)?;
        let (h_main, _) = self.branch_forward(&self.layout.main, self.input(&sample.main_view))?;
        let h_top = if self.config().fusion.uses_top() {
            Some(self.branch_forward(&self.layout.top, self.input(&sample.top_view))?.0)
        } else {
            None
        };
        Ok(FeatureSet {
            h_main,
            h_top,
            h_fused: None,
        })
    }

    fn fuse_forward(&self, h_main: &[S], h_top: &[S]) -> Result<(Option<FusionWeights<S>>, Vec<S>, FusionTrace<S>)> {
        if h_main.len() != h_top.len() {
            return Err(Error::shape(
                "attend_fuse",
                format!("h_main has {} entries, h_top has {}", h_main.len(), h_top.len()),
            ));
        }
        let (weights, attention) = match self.config().fusion {
            FusionMode::Attention => {
                let (s_main, t_main) = self.mlp_forward(&self.layout.attention, h_main)?;
                let (s_top, t_top) = self.mlp_forward(&self.layout.attention, h_top)?;
                let scores = Tensor::vector(vec![s_main[0], s_top[0]]);
                let (alpha, t_soft) = forward_op(OpKind::Softmax, &[&scores], &[])?;
                (alpha, Some((t_main, t_top, t_soft)))
            }
            _ => (Tensor::vector(vec![S::one(), S::one()]), None),
        };
        let (hm, ht) = (Tensor::vector(h_main.to_vec()), Tensor::vector(h_top.to_vec()));
        let (h_fused, combine) = forward_op(OpKind::WeightedSum, &[&weights, &hm, &ht], &[])?;
        let fw = attention.as_ref().map(|_| FusionWeights {
            alpha_main: weights.data()[0],
            alpha_top: weights.data()[1],
        });
        Ok((fw, h_fused.into_data(), FusionTrace { attention, combine }))
    }

    /// Shared attention MLP scores each view; the scores are softmax-normalized
    /// jointly and the fused feature is the weighted sum of the two views.
    pub fn attend_fuse(&self, h_main: &[S], h_top: &[S]) -> Result<(FusionWeights<S>, Vec<S>)> {
        if h_main.len() != h_top.len() {
            return Err(Error::shape(
                "attend_fuse",
                format!("h_main has {} entries, h_top has {}", h_main.len(), h_top.len()),
            ));
        }
        let (s_main, _) = self.mlp_forward(&self.layout.attention, h_main)?;
        let (s_top, _) = self.mlp_forward(&self.layout.attention, h_top)?;
        let a = softmax(&[s_main[0], s_top[0]]);
        let fused = h_main.iter().zip(h_top).map(|(&m, &t)| a[0] * m + a[1] * t).collect();
        Ok((
            FusionWeights {
                alpha_main: a[0],
                alpha_top: a[1],
            },
            fused,
        ))
    }

    pub fn head_logits(&self, feature: &[S], head: Head) -> Result<Vec<S>> {
        let d = self.config().feature_dim();
        if feature.len() != d {
            return Err(Error::shape("classify", format!("feature has {} entries, expected {d}", feature.len())));
        }
        Ok(self.mlp_forward(&self.layout.heads[head.index()], feature)?.0)
    }

    pub fn classify(&self, feature: &[S], head: Head) -> Result<Distribution<S>> {
        Distribution::from_logits(&self.head_logits(feature, head)?)
    }

    /// Forward pass that keeps everything `backward` needs.
    pub fn forward_train(&self, sample: &MultiViewSample) -> Result<Forward<S>> {
        self.check_dims(sample)?;
        let mode = self.config().fusion;
        let (h_main, main_trace) = self.branch_forward(&self.layout.main, self.input(&sample.main_view))?;
        let (h_top, top_trace) = if mode.uses_top() {
            let (h, t) = self.branch_forward(&self.layout.top, self.input(&sample.top_view))?;
            (Some(h), Some(t))
        } else {
            (None, None)
        };
        let (fusion, h_fused, fusion_trace) = match &h_top {
            Some(ht) => {
                let (w, hf, tr) = self.fuse_forward(&h_main, ht)?;
                (w, Some(hf), Some(tr))
            }
            None => (None, None, None),
        };
        let mut heads: [Option<MlpTrace<S>>; 3] = [None, None, None];
        let mut run_head = |feat: Option<&Vec<S>>, head: Head| -> Result<Option<Vec<S>>> {
            match feat {
                Some(f) => {
                    let (y, tr) = self.mlp_forward(&self.layout.heads[head.index()], f)?;
                    heads[head.index()] = Some(tr);
                    Ok(Some(y))
                }
                None => Ok(None),
            }
        };
        let main = run_head(Some(&h_main), Head::Main)?.expect("main head always runs");
        let top = run_head(h_top.as_ref(), Head::Top)?;
        let fused = run_head(h_fused.as_ref(), Head::Fused)?;
        Ok(Forward {
            features: FeatureSet {
                h_main,
                h_top,
                h_fused,
            },
            fusion,
            logits: HeadLogits { main, top, fused },
            trace: Trace {
                main: main_trace,
                top: top_trace,
                fusion: fusion_trace,
                heads,
            },
        })
    }

    /// Inference-path forward: features, fusion weights, and the three head distributions.
    pub fn forward_all(&self, sample: &MultiViewSample) -> Result<(FeatureSet<S>, Option<FusionWeights<S>>, PredictionTriple<S>)> {
        let f = self.forward_train(sample)?;
        let preds = PredictionTriple::from_logits(&f.logits)?;
        Ok((f.features, f.fusion, preds))
    }

    /// Parameter gradients given dL/d(logits) for each head that ran.
    /// Heads without an upstream gradient contribute nothing.
    pub fn backward(&self, trace: &Trace<S>, grad_logits: &HeadLogits<S>) -> Result<Vec<Tensor<S>>> {
        let mut grads = self.zero_grads();
        let d = self.config().feature_dim();
        let mut g_main = vec![S::zero(); d];
        let mut g_top = vec![S::zero(); d];
        let mut g_fused = vec![S::zero(); d];
        for (head, target) in [
            (Head::Main, &mut g_main),
            (Head::Top, &mut g_top),
            (Head::Fused, &mut g_fused),
        ] {
            let (Some(g), Some(tr)) = (grad_logits.get(head), trace.heads[head.index()].as_ref()) else {
                continue;
            };
            let gh = self.mlp_backward(&self.layout.heads[head.index()], tr, g.to_vec(), &mut grads)?;
            for (a, b) in target.iter_mut().zip(gh) {
                *a += b;
            }
        }
        if let Some(ft) = &trace.fusion {
            let gc = backward_op(OpKind::WeightedSum, Some(&ft.combine), &Tensor::vector(g_fused))?;
            for (a, &b) in g_main.iter_mut().zip(gc.inputs[1].data()) {
                *a += b;
            }
            for (a, &b) in g_top.iter_mut().zip(gc.inputs[2].data()) {
                *a += b;
            }
            if let Some((t_main, t_top, t_soft)) = &ft.attention {
                let gs = backward_op(OpKind::Softmax, Some(t_soft), &gc.inputs[0])?.inputs.remove(0);
                let gs = gs.data();
                let att = &self.layout.attention;
                let gm = self.mlp_backward(att, t_main, vec![gs[0]], &mut grads)?;
                let gt = self.mlp_backward(att, t_top, vec![gs[1]], &mut grads)?;
                for (a, b) in g_main.iter_mut().zip(gm) {
                    *a += b;
                }
                for (a, b) in g_top.iter_mut().zip(gt) {
                    *a += b;
                }
            }
        }
        self.branch_backward(&self.layout.main, &trace.main, g_main, &mut grads)?;
        if let Some(tt) = &trace.top {
            self.branch_backward(&self.layout.top, tt, g_top, &mut grads)?;
        }
        Ok(grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Class, Dims};
    use crate::model::ModelConfig;

    fn sample(seed: u64, dm: Dims, dt: Dims) -> MultiViewSample {
        use rand::Rng as _;
        let mut r = crate::rng::stream(seed, "test", &[]);
        let mut img = |d: Dims| Image::new(d, (0..d.area()).map(|_| r.random::<f32>()).collect()).unwrap();
        MultiViewSample {
            id: 0,
            main_view: img(dm),
            top_view: img(dt),
            label: Class::Crack,
        }
    }

    fn model() -> Model<f64> {
        Model::init(ModelConfig::default(), 1).unwrap()
    }

    #[test]
    fn zero_input_and_zero_bias_give_zero_features() {
        let identity = ModelConfig {
            input_mean: 0.0,
            input_std: 1.0,
            ..ModelConfig::default()
        };
        let m = Model::<f64>::init(identity, 1).unwrap();
        let s = MultiViewSample {
            id: 0,
            main_view: Image::filled(Dims::new(32, 32), 0.0),
            top_view: Image::filled(Dims::new(32, 24), 0.0),
            label: Class::Normal,
        };
        let f = m.extract_features(&s).unwrap();
        assert!(f.h_main.iter().all(|&v| v == 0.0));
        assert!(f.h_top.unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(f.h_main.len(), 32);
    }

    #[test]
    fn top_view_does_not_touch_main_path() {
        let m = model();
        let s = sample(1, Dims::new(32, 32), Dims::new(32, 24));
        let mut s2 = s.clone();
        s2.top_view = sample(2, Dims::new(32, 32), Dims::new(32, 24)).top_view;
        let (f1, _, p1) = m.forward_all(&s).unwrap();
        let (f2, _, p2) = m.forward_all(&s2).unwrap();
        assert_eq!(f1.h_main, f2.h_main);
        assert_ne!(f1.h_top, f2.h_top);
        assert_eq!(p1.y1, p2.y1);
        assert_ne!(p1.y2, p2.y2);
    }

    #[test]
    fn equal_features_get_equal_weights() {
        let m = model();
        let h: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).sin().abs()).collect();
        let (w, fused) = m.attend_fuse(&h, &h).unwrap();
        assert_eq!(w.alpha_main, 0.5);
        assert_eq!(w.alpha_top, 0.5);
        for (a, b) in fused.iter().zip(&h) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(m.attend_fuse(&h, &h[..31]).is_err());
    }

    #[test]
    fn fused_feature_is_convex_combination() {
        let m = model();
        for seed in 0..20 {
            let s = sample(seed, Dims::new(32, 32), Dims::new(32, 24));
            let (f, w, _) = m.forward_all(&s).unwrap();
            let w = w.unwrap();
            assert!((w.alpha_main + w.alpha_top - 1.0).abs() < 1e-12);
            assert!(w.alpha_main > 0.0 && w.alpha_top > 0.0);
            let (hm, ht, hf) = (&f.h_main, f.h_top.as_ref().unwrap(), f.h_fused.as_ref().unwrap());
            for i in 0..hm.len() {
                let (lo, hi) = (hm[i].min(ht[i]), hm[i].max(ht[i]));
                assert!(hf[i] >= lo - 1e-12 && hf[i] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn zero_feature_gives_uniform_head() {
        let m = model();
        let d = m.classify(&[0.0; 32], Head::Fused).unwrap();
        assert_eq!(d.probs(), &[0.25; 4]);
        assert!(m.classify(&[0.0; 31], Head::Main).is_err());
        assert!(Head::from_id("C4").is_err());
        assert_eq!(Head::from_id("C3").unwrap(), Head::Fused);
    }

    #[test]
    fn dims_mismatch_is_rejected() {
        let m = model();
        let s = sample(0, Dims::new(32, 32), Dims::new(32, 32));
        let msg = m.extract_features(&s).unwrap_err().to_string();
        assert!(msg.contains("32x32") && msg.contains("32x24"), "{msg}");
    }

    #[test]
    fn forward_is_deterministic() {
        let m = model();
        let s = sample(9, Dims::new(32, 32), Dims::new(32, 24));
        assert_eq!(m.forward_all(&s).unwrap(), m.forward_all(&s).unwrap());
    }
}
