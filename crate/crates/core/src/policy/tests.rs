use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::domain::{generate_instance, AgentFeatures, Domain, DomainRules};
use crate::nn::AttentionConfig;
use crate::rng;

fn tiny(domain: Domain) -> ModelConfig {
    ModelConfig::new(domain, AttentionConfig { d_h: 8, heads: 2, d_ff: 12, blocks: 2 })
}

fn capped(inst: Instance, cap: usize) -> Instance {
    inst.with_rules(DomainRules { max_cardinality: cap, partition_required: false }).unwrap()
}

#[test]
fn state_transitions_and_mask() {
    let s = State::empty(3);
    assert_eq!(s.mask(), vec![false, false, false, true]);
    let s1 = s.with_member(1).unwrap();
    assert_eq!(s.size(), 0);
    assert_eq!(s1.members(), vec![1]);
    assert_eq!(s1.mask(), vec![false, true, false, false]);
    assert!(s1.with_member(1).is_err());
    assert!(s1.with_member(3).is_err());
    let b = State::with_blocked(vec![true, false, false]);
    assert!(b.with_member(0).is_err());
    assert_eq!(b.mask(), vec![true, false, false, true]);
}

#[test]
fn pool_encoding_shape_and_duplicates() {
    let p = PolicyParams::seeded(tiny(Domain::Ridesharing), 1).unwrap();
    let inst = generate_instance(Domain::Ridesharing, 6, 2).unwrap();
    let h = encode_pool(&p, &inst).unwrap();
    assert_eq!(h.shape(), (6, 8));

    let agent = inst.agents()[0].clone();
    let dup = Instance::new(Domain::Ridesharing, vec![agent.clone(), inst.agents()[1].clone(), agent], 0).unwrap();
    let h = encode_pool(&p, &dup).unwrap();
    let dev = h.row(0).iter().zip(h.row(2)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-5);

    let team = generate_instance(Domain::TeamFormation, 3, 1).unwrap();
    assert!(matches!(encode_pool(&p, &team), Err(Error::Shape(_))));
}

#[test]
fn collective_summary_cases() {
    let p = PolicyParams::seeded(tiny(Domain::Ridesharing), 1).unwrap();
    let inst = generate_instance(Domain::Ridesharing, 4, 2).unwrap();
    let h = encode_pool(&p, &inst).unwrap();
    assert_eq!(encode_collective(&p, &h, &[false; 4]).unwrap(), p.placeholder.data());
    assert_eq!(encode_collective(&p, &h, &[false, false, true, false]).unwrap(), h.row(2));
    let two = encode_collective(&p, &h, &[true, false, false, true]).unwrap();
    for k in 0..8 {
        assert!((two[k] - 0.5 * (h.get(0, k) + h.get(3, k))).abs() < 1e-15);
    }
    assert!(encode_collective(&p, &h, &[true]).is_err());
}

#[test]
fn single_agent_is_forced() {
    let p = PolicyParams::seeded(tiny(Domain::Ridesharing), 1).unwrap();
    let inst = generate_instance(Domain::Ridesharing, 1, 2).unwrap();
    let h = encode_pool(&p, &inst).unwrap();
    let out = decode_probs(&p, &h, p.placeholder.data(), &State::empty(1).mask()).unwrap();
    assert_eq!(out.probs, vec![1.0, 0.0]);
    assert_eq!(out.entropy, 0.0);
    assert_eq!(out.log_probs[1], f64::NEG_INFINITY);
}

#[test]
fn everything_masked_is_an_error() {
    assert!(matches!(clipped_softmax(&[0.1, 0.2], &[true, true], 10.0), Err(Error::NoActionAvailable)));
    assert!(clipped_softmax(&[0.1], &[true, false], 10.0).is_err());
}

#[test]
fn uniform_logits_have_log_m_entropy() {
    let out = clipped_softmax(&[0.3; 6], &[false, true, false, false, true, false], 10.0).unwrap();
    assert!((out.entropy - 4f64.ln()).abs() < 1e-12);
    assert_eq!(out.probs[1], 0.0);
    assert!((out.probs[0] - 0.25).abs() < 1e-15);
}

#[test]
fn entropy_shrinks_as_gamma_grows() {
    let mut r = rng::stream(8, &[]);
    for _ in 0..200 {
        let m = r.gen_range(2..12);
        let u: Vec<f64> = (0..m).map(|_| r.gen_range(-3.0..3.0)).collect();
        let mask: Vec<bool> = (0..m).map(|i| i > 0 && r.gen_bool(0.3)).collect();
        let entropies: Vec<f64> =
            [1.0, 5.0, 10.0, 50.0].iter().map(|&g| clipped_softmax(&u, &mask, g).unwrap().entropy).collect();
        for w in entropies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{entropies:?}");
        }
    }
}

#[test]
fn cap_one_builds_singletons() {
    let p = PolicyParams::seeded(tiny(Domain::Ridesharing), 1).unwrap();
    let inst = capped(generate_instance(Domain::Ridesharing, 5, 2).unwrap(), 1);
    let mut r = rng::stream(1, &[]);
    for _ in 0..20 {
        let roll = rollout(&p, &inst, &State::empty(5), Selection::Sample(&mut r)).unwrap();
        assert_eq!(roll.collective.len(), 1);
        assert_eq!(roll.step_log_probs.len(), 1);
    }
}

#[test]
fn greedy_is_deterministic_and_locally_optimal() {
    let p = PolicyParams::seeded(tiny(Domain::TeamFormation), 4).unwrap();
    let inst = generate_instance(Domain::TeamFormation, 7, 5).unwrap();
    let start = State::empty(7);
    let a = rollout(&p, &inst, &start, Selection::Greedy).unwrap();
    let b = rollout(&p, &inst, &start, Selection::Greedy).unwrap();
    assert_eq!(a, b);

    let dec = Decoder::new(&p, &inst).unwrap();
    let mut state = start.clone();
    for (t, &action) in a.actions.iter().enumerate() {
        let out = dec.probs(&state).unwrap();
        for (i, &lp) in out.log_probs.iter().enumerate() {
            assert!(lp <= a.step_log_probs[t], "step {t}: action {i} beats the greedy choice");
        }
        if action < 7 {
            state = state.with_member(action).unwrap();
        }
    }
}

#[test]
fn rollout_bookkeeping() {
    let p = PolicyParams::seeded(tiny(Domain::Ridesharing), 2).unwrap();
    let inst = generate_instance(Domain::Ridesharing, 9, 3).unwrap();
    let mut r = rng::stream(3, &[]);
    let dec = Decoder::new(&p, &inst).unwrap();
    for _ in 0..50 {
        let roll = dec.rollout(&State::empty(9), Selection::Sample(&mut r)).unwrap();
        let k = roll.collective.len();
        assert!((1..=5).contains(&k));
        let steps = roll.step_log_probs.len();
        assert!(steps == k || steps == k + 1);
        assert_eq!(roll.collective.value(), inst.utility(roll.collective.members()).unwrap());
        let lp = dec.trajectory_log_prob(&State::empty(9), &roll.actions).unwrap();
        assert!((lp - roll.log_prob()).abs() < 1e-12);
    }
}

#[test]
fn greedy_packing_covers_every_agent_once() {
    let p = PolicyParams::seeded(tiny(Domain::TeamFormation), 2).unwrap();
    let inst = generate_instance(Domain::TeamFormation, 10, 3).unwrap();
    let packing = Decoder::new(&p, &inst).unwrap().greedy_packing().unwrap();
    let mut seen: Vec<usize> = packing.collectives.iter().flat_map(|c| c.members().to_vec()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..10).collect::<Vec<_>>());
    let total: f64 = packing.collectives.iter().map(|c| c.value()).sum();
    assert_eq!(total, packing.total);
}

#[test]
fn blocked_agents_are_never_chosen() {
    let p = PolicyParams::seeded(tiny(Domain::Ridesharing), 2).unwrap();
    let inst = generate_instance(Domain::Ridesharing, 6, 3).unwrap();
    let blocked = vec![true, false, true, false, true, true];
    let mut r = rng::stream(9, &[]);
    for _ in 0..30 {
        let roll = rollout(&p, &inst, &State::with_blocked(blocked.clone()), Selection::Sample(&mut r)).unwrap();
        assert!(roll.collective.members().iter().all(|&m| m == 1 || m == 3));
    }
    let all = State::with_blocked(vec![true; 6]);
    assert!(matches!(rollout(&p, &inst, &all, Selection::Greedy), Err(Error::NoActionAvailable)));
}

#[test]
fn compatibility_check() {
    let p = PolicyParams::seeded(tiny(Domain::Ridesharing), 2).unwrap();
    assert!(check_compatible(&p, &generate_instance(Domain::Ridesharing, 3, 1).unwrap()).is_ok());
    assert!(check_compatible(&p, &generate_instance(Domain::TeamFormation, 3, 1).unwrap()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probability_laws(seed in 0u64..10_000, n in 1usize..9) {
        let p = PolicyParams::seeded(tiny(Domain::Ridesharing), seed).unwrap();
        let inst = generate_instance(Domain::Ridesharing, n, seed).unwrap();
        let dec = Decoder::new(&p, &inst).unwrap();
        let mut r = rng::stream(seed, &[5]);
        let mut state = State::empty(n);
        for _ in 0..r.gen_range(0..n.min(5)) {
            let free: Vec<usize> = (0..n).filter(|&i| state.is_selectable(i)).collect();
            state = state.with_member(*free.choose(&mut r).unwrap()).unwrap();
        }
        let mask = state.mask();
        if mask.iter().all(|&m| m) {
            return Ok(());
        }
        let out = dec.probs(&state).unwrap();
        prop_assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let mut min = f64::INFINITY;
        let mut max: f64 = 0.0;
        for i in 0..=n {
            if mask[i] {
                prop_assert_eq!(out.probs[i], 0.0);
            } else {
                prop_assert!(out.probs[i] > 0.0);
                prop_assert!((out.log_probs[i].exp() - out.probs[i]).abs() < 1e-6);
                min = min.min(out.probs[i]);
                max = max.max(out.probs[i]);
            }
        }
        prop_assert!(max / min <= (2.0 * p.config.gamma).exp() * (1.0 + 1e-9));
        let h: f64 = out.probs.iter().filter(|&&q| q > 0.0).map(|q| -q * q.ln()).sum();
        prop_assert!((h - out.entropy).abs() < 1e-9);
    }

    #[test]
    fn relabeling_agents_relabels_the_policy(seed in 0u64..10_000, n in 2usize..10) {
        let p = PolicyParams::seeded(tiny(Domain::TeamFormation), seed).unwrap();
        let inst = generate_instance(Domain::TeamFormation, n, seed).unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, &[1]));
        let perm = inst.permuted(&order).unwrap();
        let h = encode_pool(&p, &inst).unwrap();
        let hp = encode_pool(&p, &perm).unwrap();
        prop_assert!(hp.max_abs_diff(&h.select_rows(&order)) < 1e-10);

        let a = rollout(&p, &inst, &State::empty(n), Selection::Greedy).unwrap();
        let b = rollout(&p, &perm, &State::empty(n), Selection::Greedy).unwrap();
        let mut mapped: Vec<usize> = b.collective.members().iter().map(|&i| order[i]).collect();
        mapped.sort_unstable();
        prop_assert_eq!(mapped, a.collective.members().to_vec());
        prop_assert!((a.log_prob() - b.log_prob()).abs() < 1e-9);
    }
}

#[test]
fn feature_width_is_enforced_at_instance_level() {
    assert!(AgentFeatures::new(Domain::Ridesharing, vec![0.5; 12]).is_err());
}
