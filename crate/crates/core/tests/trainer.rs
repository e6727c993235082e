use mvfd::dataset::{generate, split, Class, DatasetSplit, Dims, GenerateConfig, MultiViewSample, SplitRatios};
use mvfd::distill::{multiview_kd_loss, DistillConfig};
use mvfd::model::{Container, HeadLogits, Model, ModelConfig, ModuleId};
use mvfd::numerics::{cross_entropy, Distribution};
use mvfd::trainer::{fit, fit_from, infer, total_loss, train_step, AblationFlags, TrainConfig, TrainState};
use mvfd::Error;

fn small() -> (ModelConfig, DatasetSplit) {
    let d = Dims::new(16, 16);
    let data = generate(&GenerateConfig {
        counts: [12, 12, 12, 6],
        main_dims: d,
        top_dims: d,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let model = ModelConfig {
        main_dims: d,
        top_dims: d,
        ..ModelConfig::default()
    };
    (model, split(&data, SplitRatios::default(), 8).unwrap())
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn snapshot(m: &Model<f64>, modules: &[ModuleId]) -> Vec<Vec<u64>> {
    m.params()
        .iter()
        .filter(|p| modules.contains(&p.module))
        .map(|p| p.tensor.data().iter().map(|v| v.to_bits()).collect())
        .collect()
}

/// Pushes a head's output bias so it confidently predicts `class`.
fn bias_head(m: &mut Model<f64>, head: &str, class: usize) {
    let name = format!("{head}.fc2.bias");
    let p = m.params_mut().iter_mut().find(|p| p.name == name).unwrap();
    p.tensor.data_mut()[class] = 50.0;
}

#[test]
fn frozen_teachers_are_bit_identical_across_their_steps() {
    let (mc, sp) = small();
    let cfg = cfg(1);
    let mut state = TrainState::<f64>::init(&mc, &cfg).unwrap();
    bias_head(&mut state.model, "head_fused", 3);
    bias_head(&mut state.model, "head_top", 3);
    let batch: Vec<MultiViewSample> = sp.train.iter().filter(|s| s.label == Class::Normal).take(6).cloned().collect();
    let teachers = [ModuleId::Attention, ModuleId::HeadFused, ModuleId::TopBranch, ModuleId::HeadTop];
    for step in 0..3 {
        let before = state.model.clone();
        let rep = train_step(&mut state, &batch, &cfg).unwrap();
        for d in &rep.decisions {
            let main_student = d.pair.student() == mvfd::gate::Role::Main;
            assert_eq!(d.freeze_teacher, main_student, "step {step}: {d:?}");
        }
        assert_eq!(rep.frozen, teachers.into_iter().collect());
        assert_eq!(snapshot(&before, &teachers), snapshot(&state.model, &teachers));
        let students = [ModuleId::MainBranch, ModuleId::HeadMain];
        assert_ne!(snapshot(&before, &students), snapshot(&state.model, &students));
    }
    for (i, p) in state.model.params().iter().enumerate() {
        let want = if teachers.contains(&p.module) { 0 } else { 3 };
        assert_eq!(state.adam_t[i], want, "{}", p.name);
    }
    assert_eq!(state.gate_log.len(), 9);
}

#[test]
fn without_the_gate_nothing_is_skipped() {
    let (mc, sp) = small();
    let cfg = TrainConfig {
        ablation: AblationFlags { use_gate: false, ..AblationFlags::FULL },
        ..cfg(1)
    };
    let mut state = TrainState::<f64>::init(&mc, &cfg).unwrap();
    for chunk in sp.train.chunks(cfg.batch_size) {
        let rep = train_step(&mut state, chunk, &cfg).unwrap();
        assert!(rep.frozen.is_empty() && rep.decisions.is_empty());
    }
    let steps = state.step;
    assert!(state.adam_t.iter().all(|&t| t == steps));
    assert!(state.gate_log.is_empty());
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let (mc, sp) = small();
    let cfg = TrainConfig { learning_rate: 0.0, ..cfg(2) };
    let init = TrainState::<f64>::init(&mc, &cfg).unwrap().model;
    let r = fit::<f64>(&mc, &cfg, &sp).unwrap();
    assert_eq!(snapshot(&init, &ModuleId::ALL), snapshot(&r.state.model, &ModuleId::ALL));
}

#[test]
fn same_config_gives_the_same_history_and_parameters() {
    let (mc, sp) = small();
    let a = fit::<f64>(&mc, &cfg(3), &sp).unwrap();
    let b = fit::<f64>(&mc, &cfg(3), &sp).unwrap();
    assert_eq!(a.state.history, b.state.history);
    assert_eq!(a.state.gate_log, b.state.gate_log);
    assert_eq!(snapshot(&a.state.model, &ModuleId::ALL), snapshot(&b.state.model, &ModuleId::ALL));
    assert_eq!(a.best_epoch, b.best_epoch);
}

#[test]
fn resuming_from_a_checkpoint_is_bit_identical() {
    let (mc, sp) = small();
    let straight = fit::<f64>(&mc, &cfg(4), &sp).unwrap();
    let half = fit::<f64>(&mc, &cfg(2), &sp).unwrap();
    let bytes = half.state.to_container(&cfg(2)).unwrap().to_bytes().unwrap();
    let (restored, saved_cfg) = TrainState::<f64>::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(saved_cfg, cfg(2));
    assert_eq!(restored, half.state);
    let resumed = fit_from(restored, &cfg(4), &sp).unwrap();
    assert_eq!(resumed.state, straight.state);
}

#[test]
fn training_lowers_the_loss() {
    let (mc, sp) = small();
    let r = fit::<f64>(&mc, &cfg(6), &sp).unwrap();
    let train: Vec<f64> = r.state.history.iter().filter(|h| h.split == "train").map(|h| h.total).collect();
    assert!(train.last().unwrap() < &train[0], "{train:?}");
    assert_eq!(r.state.history.len(), 2 * 7);
}

#[test]
fn best_checkpoint_is_the_earliest_top_validation_epoch() {
    let (mc, sp) = small();
    let r = fit::<f64>(&mc, &cfg(5), &sp).unwrap();
    let val: Vec<(usize, f64)> = r
        .state
        .history
        .iter()
        .filter(|h| h.split == "validation")
        .map(|h| (h.epoch, h.accuracy))
        .collect();
    let top = val.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let first = val.iter().find(|v| v.1 == top).unwrap().0;
    assert_eq!((r.best_epoch, r.best_val_accuracy), (first, top));
}

#[test]
fn empty_training_split_is_rejected() {
    let (mc, mut sp) = small();
    sp.train.clear();
    assert!(matches!(fit::<f64>(&mc, &cfg(1), &sp), Err(Error::InvalidArgument(_))));
}

#[test]
fn total_loss_is_the_sum_of_independent_terms() {
    let cfg = TrainConfig::default();
    let mut r = mvfd::rng::stream(1, "loss-oracle", &[]);
    for _ in 0..100 {
        use rand::Rng;
        let mut z = || (0..4).map(|_| r.random_range(-4.0..4.0)).collect::<Vec<f64>>();
        let (a, b, c) = (z(), z(), z());
        let label = (a[0].abs() * 100.0) as usize % 4;
        let report = total_loss(
            &HeadLogits { main: a.clone(), top: Some(b.clone()), fused: Some(c.clone()) },
            label,
            &cfg,
        )
        .unwrap();
        let ce = |z: &[f64]| cross_entropy(&Distribution::from_logits(z).unwrap(), label).unwrap();
        let kd = multiview_kd_loss(&a, &b, &c, &DistillConfig::default()).unwrap().total;
        let want = ce(&a) + ce(&b) + ce(&c) + kd;
        assert!((report.total - want).abs() < 1e-12, "{} vs {want}", report.total);
    }
}

#[test]
fn infer_takes_the_fused_argmax() {
    let (mc, sp) = small();
    let m = Model::<f64>::init(mc, 0).unwrap();
    let s = &sp.test[0];
    let (class, preds) = infer(&m, s).unwrap();
    assert_eq!(class.index(), preds.y3.as_ref().unwrap().argmax());
    assert_eq!(Distribution::new(vec![0.1, 0.6, 0.2, 0.1]).unwrap().argmax(), 1);
    assert_eq!(Distribution::<f64>::uniform(4).argmax(), 0);
    assert_eq!(Class::from_index(0).unwrap(), Class::Normal);
}

#[test]
fn inference_ignores_how_the_parameters_were_trained() {
    let (mc, sp) = small();
    let gated = fit::<f64>(&mc, &cfg(2), &sp).unwrap().state.model;
    let plain_cfg = TrainConfig {
        ablation: AblationFlags { use_gate: false, ..AblationFlags::FULL },
        ..cfg(2)
    };
    let mut other = fit::<f64>(&mc, &plain_cfg, &sp).unwrap().state.model;
    let values = gated.params().iter().map(|p| (p.name.clone(), p.tensor.clone())).collect();
    other.load_values(values).unwrap();
    for s in &sp.test {
        assert_eq!(infer(&gated, s).unwrap(), infer(&other, s).unwrap());
    }
}

#[test]
fn non_finite_parameters_abort_with_a_named_tensor() {
    let (mc, sp) = small();
    let cfg = cfg(1);
    let mut state = TrainState::<f64>::init(&mc, &cfg).unwrap();
    state.model.params_mut()[0].tensor.data_mut()[0] = f64::NAN;
    let batch: Vec<MultiViewSample> = sp.train[..4].to_vec();
    match train_step(&mut state, &batch, &cfg) {
        Err(Error::NonFinite(what)) => assert!(what.contains("logits.main"), "{what}"),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

