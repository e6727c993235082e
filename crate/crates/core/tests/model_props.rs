use mvfd::dataset::{generate, Dims, GenerateConfig, Image, MultiViewSample};
use mvfd::model::{FusionMode, Model, ModelConfig};
use proptest::prelude::*;

fn samples(n: usize) -> Vec<MultiViewSample> {
    let all = generate(&GenerateConfig { counts: [1, 1, 1, 1], seed: 5, ..GenerateConfig::default() }).unwrap();
    all.into_iter().take(n).collect()
}

#[test]
fn fresh_heads_sit_near_uniform_across_1000_inits() {
    let data = samples(4);
    let mut worst = 0.0f64;
    for seed in 0..1000 {
        let m = Model::<f64>::init(ModelConfig::default(), seed).unwrap();
        let s = &data[seed as usize % data.len()];
        let (_, _, p) = m.forward_all(s).unwrap();
        for d in [Some(&p.y1), p.y2.as_ref(), p.y3.as_ref()].into_iter().flatten() {
            for &v in d.probs() {
                worst = worst.max((v - 0.25).abs());
            }
        }
    }
    assert!(worst < 0.05, "largest deviation from uniform {worst}");
}

fn with_top(s: &MultiViewSample, f: impl Fn(f32) -> f32) -> MultiViewSample {
    let t = &s.top_view;
    let px = t.pixels().iter().map(|&v| f(v)).collect();
    MultiViewSample { top_view: Image::new(t.dims(), px).unwrap(), ..s.clone() }
}

#[test]
fn top_view_does_not_reach_the_main_head() {
    let s = &samples(1)[0];
    for fusion in [FusionMode::Attention, FusionMode::Sum, FusionMode::SingleView] {
        let m = Model::<f64>::init(ModelConfig { fusion, ..ModelConfig::default() }, 2).unwrap();
        let (_, _, a) = m.forward_all(s).unwrap();
        let (_, _, b) = m.forward_all(&with_top(s, |v| 1.0 - v)).unwrap();
        assert_eq!(a.y1, b.y1);
        if fusion == FusionMode::SingleView {
            assert_eq!(a, b);
        } else {
            assert_ne!(a.y2, b.y2);
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let s = &samples(1)[0];
    let m = Model::<f64>::init(ModelConfig::default(), 9).unwrap();
    assert_eq!(m.forward_all(s).unwrap(), m.forward_all(s).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fusion_is_a_convex_combination(
        seed in 0u64..1000,
        hm in prop::collection::vec(-5.0f64..5.0, 32),
        ht in prop::collection::vec(-5.0f64..5.0, 32),
    ) {
        let m = Model::<f64>::init(ModelConfig::default(), seed).unwrap();
        let (w, h) = m.attend_fuse(&hm, &ht).unwrap();
        prop_assert!(w.alpha_main > 0.0 && w.alpha_top > 0.0);
        prop_assert!((w.alpha_main + w.alpha_top - 1.0).abs() < 1e-15);
        for i in 0..32 {
            let want = w.alpha_main * hm[i] + w.alpha_top * ht[i];
            prop_assert!((h[i] - want).abs() < 1e-12);
            prop_assert!(h[i] >= hm[i].min(ht[i]) - 1e-12 && h[i] <= hm[i].max(ht[i]) + 1e-12);
        }
    }

    #[test]
    fn head_outputs_are_distributions(seed in 0u64..1000, idx in 0usize..4) {
        let data = samples(4);
        let m = Model::<f64>::init(ModelConfig { main_dims: Dims::new(32, 32), ..ModelConfig::default() }, seed).unwrap();
        let (_, _, p) = m.forward_all(&data[idx]).unwrap();
        for d in [Some(&p.y1), p.y2.as_ref(), p.y3.as_ref()].into_iter().flatten() {
            prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
