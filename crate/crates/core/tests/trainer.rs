use hsplat_core::dataset::{generate, Dataset, DatasetConfig, INPUT_VIEW};
use hsplat_core::numerics::ParamSet;
use hsplat_core::trainer::{
    adam_update, is_child_param, sample_batch, AdamHyper, Model, ModelConfig, Stage, TrainConfig, TrainError,
    Trainer,
};

fn tiny_data() -> Dataset {
    generate(&DatasetConfig::new(3, 4, 16, 5)).unwrap()
}

fn tiny_trainer(stage1: u64, total: u64) -> Trainer {
    let model = Model::init(ModelConfig::desk(16).unwrap(), 1).unwrap();
    let config = TrainConfig {
        batch_size: 2,
        targets: 2,
        stage1,
        total,
        seed: 9,
        adam: AdamHyper { lr: 1e-3, ..AdamHyper::default() },
        ..TrainConfig::default()
    };
    Trainer::new(model, config).unwrap()
}

#[test]
fn first_adam_step_moves_against_the_gradient() {
    let hp = AdamHyper { lr: 0.01, ..AdamHyper::default() };
    let mut p = [1.0f32, 1.0];
    let (mut m, mut v) = ([0.0f32; 2], [0.0f32; 2]);
    adam_update(&mut p, &[0.5, -2.0], &mut m, &mut v, 1, &hp);
    // bias correction makes the first step lr * sign(g)
    assert!((p[0] - 0.99).abs() < 1e-6);
    assert!((p[1] - 1.01).abs() < 1e-6);
}

#[test]
fn zero_gradient_leaves_parameters_alone() {
    let hp = AdamHyper::default();
    let mut p = [0.3f32, -4.0];
    let (mut m, mut v) = ([0.0f32; 2], [0.0f32; 2]);
    for step in 1..=5 {
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, step, &hp);
    }
    assert_eq!(p, [0.3, -4.0]);
}

#[test]
fn adam_minimises_a_parabola() {
    let hp = AdamHyper { lr: 0.1, ..AdamHyper::default() };
    let mut x = [1.0f32];
    let (mut m, mut v) = ([0.0f32], [0.0f32]);
    for step in 1..=100 {
        let g = [2.0 * x[0]];
        adam_update(&mut x, &g, &mut m, &mut v, step, &hp);
    }
    assert!(x[0].abs() < 0.05, "x = {}", x[0]);
}

#[test]
fn stages_switch_at_the_boundary() {
    assert_eq!(Stage::at(0, 3), Stage::Parents);
    assert_eq!(Stage::at(2, 3), Stage::Parents);
    assert_eq!(Stage::at(3, 3), Stage::Full);
    assert_eq!(Stage::at(0, 0), Stage::Full);
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = TrainConfig { stage1: 10, total: 5, ..TrainConfig::default() };
    assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
    assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn batches_pick_an_input_and_distinct_other_targets() {
    let data = tiny_data();
    let config = TrainConfig { batch_size: 8, targets: 3, seed: 2, ..TrainConfig::default() };
    let mut inputs = Vec::new();
    for iter in 0..20 {
        let batch = sample_batch(&config, &data.train, iter);
        assert_eq!(batch.len(), data.train.len().min(8));
        let mut ids: Vec<usize> = batch.iter().map(|s| s.instance).collect();
        ids.dedup();
        assert_eq!(ids.len(), batch.len());
        for s in &batch {
            assert!(s.input < 4);
            assert_eq!(s.targets.len(), 3);
            assert!(s.targets.windows(2).all(|w| w[0] < w[1]));
            assert!(!s.targets.contains(&s.input));
            inputs.push(s.input);
        }
    }
    inputs.sort_unstable();
    inputs.dedup();
    assert_eq!(inputs, [0, 1, 2, 3]);
    assert_eq!(sample_batch(&config, &data.train, 7), sample_batch(&config, &data.train, 7));

    let fixed = TrainConfig { random_input: false, ..config };
    for iter in 0..20 {
        assert!(sample_batch(&fixed, &data.train, iter).iter().all(|s| s.input == INPUT_VIEW));
    }
}

#[test]
fn learning_rate_anneals_linearly_to_zero() {
    let mut c = TrainConfig { stage1: 50, total: 100, ..TrainConfig::default() };
    c.adam.lr = 1e-3;
    assert_eq!(c.lr_at(99), 1e-3);
    c.anneal_from = Some(60);
    assert_eq!(c.lr_at(59), 1e-3);
    assert_eq!(c.lr_at(60), 1e-3);
    assert!((c.lr_at(80) - 5e-4).abs() < 1e-9);
    assert_eq!(c.lr_at(100), 0.0);
    assert!(c.validate().is_ok());
    c.anneal_from = Some(100);
    assert!(c.validate().is_err());
}

fn child_tensors(p: &ParamSet) -> Vec<(String, Vec<f32>)> {
    p.iter()
        .filter(|(n, _)| is_child_param(n))
        .map(|(n, t)| (n.to_string(), t.data().to_vec()))
        .collect()
}

#[test]
fn stage_one_freezes_child_heads_and_stage_two_trains_them() {
    let data = tiny_data();
    let mut tr = tiny_trainer(3, 13);
    let before = child_tensors(&tr.model.params);
    let enc_before = tr.model.params.get("head.w").unwrap().clone();
    for _ in 0..3 {
        let r = tr.step(&data.train).unwrap();
        assert_eq!(r.stage, Stage::Parents);
        assert_eq!(r.child_grad_l1, 0.0);
    }
    assert_eq!(child_tensors(&tr.model.params), before);
    assert!(child_tensors(&tr.adam.m).iter().all(|(_, v)| v.iter().all(|&x| x == 0.0)));
    assert!(child_tensors(&tr.adam.v).iter().all(|(_, v)| v.iter().all(|&x| x == 0.0)));
    assert_ne!(tr.model.params.get("head.w").unwrap(), &enc_before);

    let mut saw_gradient = false;
    for _ in 0..10 {
        let r = tr.step(&data.train).unwrap();
        assert_eq!(r.stage, Stage::Full);
        saw_gradient |= r.child_grad_l1 > 0.0;
    }
    assert!(saw_gradient);
    assert_ne!(child_tensors(&tr.model.params), before);
    assert!(tr.done());
}

#[test]
fn same_seed_gives_identical_runs() {
    let data = tiny_data();
    let mut a = tiny_trainer(2, 4);
    let mut b = tiny_trainer(2, 4);
    for _ in 0..4 {
        assert_eq!(a.step(&data.train).unwrap(), b.step(&data.train).unwrap());
    }
    assert_eq!(a, b);
}

#[test]
fn resuming_from_a_snapshot_matches_an_uninterrupted_run() {
    let data = tiny_data();
    let mut straight = tiny_trainer(2, 5);
    let mut first = tiny_trainer(2, 5);
    for _ in 0..3 {
        straight.step(&data.train).unwrap();
        first.step(&data.train).unwrap();
    }
    let mut resumed = Trainer {
        model: Model {
            config: first.model.config.clone(),
            params: first.model.params.clone(),
        },
        config: first.config.clone(),
        adam: first.adam.clone(),
        iter: first.iter,
    };
    drop(first);
    while !straight.done() {
        assert_eq!(straight.step(&data.train).unwrap(), resumed.step(&data.train).unwrap());
    }
    assert_eq!(straight, resumed);
}

#[test]
fn stepping_without_data_is_an_error() {
    let mut tr = tiny_trainer(1, 2);
    assert_eq!(tr.step(&[]), Err(TrainError::NoData));
}
