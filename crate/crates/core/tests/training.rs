mod common;

use common::{enumerate_paths, tiny_params};
use coform::domain::generate_instance;
use coform::nn::gradcheck::{central_difference, relative_error};
use coform::nn::{flatten, zero_like};
use coform::policy::{replay, PolicyParams, State};
use coform::train::{adam_step, OptimizerState};
use coform::{Domain, Instance};

fn expected_value(params: &PolicyParams, instance: &Instance) -> f64 {
    enumerate_paths(params, instance)
        .unwrap()
        .iter()
        .map(|p| p.prob * instance.utility(&p.members).unwrap())
        .sum()
}

fn batch_objective(params: &PolicyParams, batch: &[Instance]) -> f64 {
    batch.iter().map(|i| expected_value(params, i)).sum::<f64>() / batch.len() as f64
}

/// Exact expectation of the score-function estimator, with a constant baseline.
fn reinforce_gradient(params: &PolicyParams, batch: &[Instance], baseline: f64) -> PolicyParams {
    let mut grads = zero_like(params);
    for instance in batch {
        for path in enumerate_paths(params, instance).unwrap() {
            let start = State::empty(instance.len());
            let trace = replay(params, instance, &start, &path.actions).unwrap();
            let advantage = instance.utility(&path.members).unwrap() - baseline;
            trace.backward(params, path.prob * advantage / batch.len() as f64, 0.0, &mut grads).unwrap();
        }
    }
    grads
}

fn two_agent_batch() -> Vec<Instance> {
    vec![
        generate_instance(Domain::TeamFormation, 2, 3).unwrap(),
        generate_instance(Domain::TeamFormation, 2, 8).unwrap(),
    ]
}

#[test]
fn enumerated_paths_form_a_distribution() {
    let params = tiny_params(Domain::TeamFormation, 1);
    for instance in two_agent_batch() {
        let paths = enumerate_paths(&params, &instance).unwrap();
        assert_eq!(paths.len(), 4);
        let total: f64 = paths.iter().map(|p| p.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for p in &paths {
            let start = State::empty(2);
            let lp = coform::policy::trajectory_log_prob(&params, &instance, &start, &p.actions).unwrap();
            assert!((lp.exp() - p.prob).abs() < 1e-12);
        }
    }
}

#[test]
fn reinforce_matches_exact_objective_gradient() {
    let params = tiny_params(Domain::TeamFormation, 1);
    let batch = two_agent_batch();
    let fd = central_difference(&params, |p| batch_objective(p, &batch), 1e-6);
    assert!(fd.iter().any(|g| g.abs() > 1e-6), "degenerate objective");
    for baseline in [0.0, -1.3] {
        let analytic = flatten(&reinforce_gradient(&params, &batch, baseline));
        let err = relative_error(&analytic, &fd);
        assert!(err < 1e-3, "relative error {err} with baseline {baseline}");
    }
}

#[test]
fn small_step_does_not_decrease_objective() {
    for seed in 0..5 {
        let mut params = tiny_params(Domain::TeamFormation, seed);
        let batch = two_agent_batch();
        let before = batch_objective(&params, &batch);
        let mut loss_grad = reinforce_gradient(&params, &batch, 0.0);
        coform::nn::scale(&mut loss_grad, -1.0);
        let mut opt = OptimizerState::new(&params);
        adam_step(&mut params, &loss_grad, &mut opt, 1e-5).unwrap();
        let after = batch_objective(&params, &batch);
        assert!(after >= before - 1e-9, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn entropy_step_raises_trajectory_entropy() {
    let instance = generate_instance(Domain::Ridesharing, 6, 2).unwrap();
    let mut params = tiny_params(Domain::Ridesharing, 4);
    let start = State::empty(6);
    let actions = [3, 1, 6];
    let entropy = |p: &PolicyParams| replay(p, &instance, &start, &actions).unwrap().rollout().entropy();
    let before = entropy(&params);
    let mut grads = zero_like(&params);
    replay(&params, &instance, &start, &actions).unwrap().backward(&params, 0.0, -1.0, &mut grads).unwrap();
    let mut opt = OptimizerState::new(&params);
    adam_step(&mut params, &grads, &mut opt, 1e-4).unwrap();
    assert!(entropy(&params) > before);
}
