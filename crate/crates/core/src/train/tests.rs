use super::*;
use crate::domain::AgentFeatures;
use crate::nn::{flatten, max_abs};

fn smoke() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        iterations: 2,
        batch_size: 4,
        eval_size: 6,
        record_wall_time: false,
        ..TrainConfig::desk(Domain::Ridesharing, 5)
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    assert!(TrainConfig { alpha: 1.0, ..smoke() }.validate().is_err());
    assert!(TrainConfig { tau: -0.1, ..smoke() }.validate().is_err());
    assert!(TrainConfig { eval_size: 1, ..smoke() }.validate().is_err());
    assert!(TrainConfig { max_cardinality: Some(0), ..smoke() }.validate().is_err());
    assert!(TrainConfig { max_grad_norm: Some(0.0), ..smoke() }.validate().is_err());
    let desk = TrainConfig::desk(Domain::Ridesharing, 10);
    assert_eq!((desk.epochs, desk.iterations, desk.batch_size, desk.learning_rate), (20, 50, 64, 3e-4));
    assert_eq!(desk.max_grad_norm, Some(5.0));
    assert_eq!(TrainConfig::default().max_grad_norm, None);
    let d = TrainConfig::default();
    assert_eq!((d.epochs, d.iterations, d.batch_size), (100, 400, 256));
    assert_eq!((d.alpha, d.tau, d.learning_rate, d.eval_size), (0.05, 0.05, 1e-4, 100));
    let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "tau": 0.0}"#).unwrap();
    assert_eq!(parsed.epochs, 3);
    assert_eq!(parsed.iterations, 400);
}

#[test]
fn smoke_run_logs_one_epoch() {
    let out = train(&smoke(), None, |_| {}).unwrap();
    assert_eq!(out.logs.len(), 1);
    let log = &out.logs[0];
    assert_eq!(log.epoch, 1);
    assert!(log.mean_entropy > 0.0);
    assert!(log.mean_value.is_finite() && log.eval_model_value.is_finite());
    assert_eq!(log.wall_ms, 0);
    assert_ne!(out.params, smoke().initial_params().unwrap());
}

#[test]
fn runs_are_reproducible() {
    let a = train(&smoke(), None, |_| {}).unwrap();
    let b = train(&smoke(), None, |_| {}).unwrap();
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.params, b.params);
}

#[test]
fn thread_count_does_not_change_the_result() {
    let one = train(&smoke(), None, |_| {}).unwrap();
    let three = train(&TrainConfig { threads: 3, ..smoke() }, None, |_| {}).unwrap();
    assert_eq!(one.logs, three.logs);
    assert_eq!(one.params, three.params);
}

#[test]
fn constant_utility_gives_zero_gradient_without_entropy() {
    // identical students: every team has the same utility
    let student = vec![1.0, 0.2, -0.4, 0.9, 0.0, 0.5, 0.7, 0.6, 0.1, 0.3, 0.8, 0.6];
    let agents = vec![AgentFeatures::new(Domain::TeamFormation, student).unwrap(); 6];
    let inst = Instance::new(Domain::TeamFormation, agents, 0).unwrap();
    let config = TrainConfig::desk(Domain::TeamFormation, 6);
    let params = config.initial_params().unwrap();
    let baseline = PolicyParams::seeded(config.model(), 99).unwrap();
    let batch = vec![inst; 4];
    let (g, stats) = loss_gradient(&params, &baseline, &batch, &[1, 2, 3, 4], 0.0).unwrap();
    assert_eq!(stats.mean_advantage, 0.0);
    assert_eq!(max_abs(&g), 0.0);
    let (g, _) = loss_gradient(&params, &baseline, &batch, &[1, 2, 3, 4], 0.05).unwrap();
    assert!(max_abs(&g) > 0.0);
}

#[test]
fn baseline_only_moves_on_a_passed_test() {
    let config = smoke();
    let params = config.initial_params().unwrap();
    let mut baseline = BaselineState::new(params.clone(), config.eval_set().unwrap()).unwrap();
    let (swapped, values) = baseline.challenge(&params, 0.05).unwrap();
    assert!(!swapped);
    assert_eq!(values, baseline.eval_values);
}

#[test]
fn checkpoints_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig { epochs: 2, ..smoke() };
    let first = train(&TrainConfig { epochs: 1, ..config.clone() }, Some(dir.path()), |_| {}).unwrap();
    assert!(dir.path().join("epoch_001.ckpt").exists());
    assert!(dir.path().join(STATE_FILE).exists());

    let resumed = Trainer::resume(config.clone(), &dir.path().join(STATE_FILE)).unwrap();
    assert_eq!(resumed.epochs_done(), 1);
    for (a, b) in flatten(&first.params).iter().zip(flatten(resumed.params())) {
        assert_eq!(*a as f32 as f64, b);
    }

    let second = train(&config, Some(dir.path()), |_| {}).unwrap();
    assert_eq!(second.logs.len(), 1);
    assert_eq!(second.logs[0].epoch, 2);
    assert!(dir.path().join("epoch_002.ckpt").exists());
    let log = fs::read_to_string(dir.path().join(LOG_FILE)).unwrap();
    assert_eq!(log.lines().count(), 2);
    let parsed: EpochLog = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    assert_eq!(parsed, second.logs[0]);

    // nothing left to do
    assert!(train(&config, Some(dir.path()), |_| {}).unwrap().logs.is_empty());

    let other = TrainConfig { attention: AttentionConfig { d_h: 8, heads: 2, d_ff: 8, blocks: 1 }, ..config };
    assert!(Trainer::resume(other, &dir.path().join(STATE_FILE)).is_err());
}
