#![allow(dead_code)]

use coform::nn::AttentionConfig;
use coform::rng;
use coform::solve::{PackingMode, WspInstance};
use coform::policy::{Decoder, ModelConfig, PolicyParams, State};
use coform::{Domain, Instance, Result};
use rand::seq::index::sample;
use rand::Rng;

/// One complete decoding path from the empty state.
#[derive(Clone, Debug)]
pub struct Path {
    pub actions: Vec<usize>,
    pub members: Vec<usize>,
    pub prob: f64,
}

/// Every trajectory with nonzero probability, found by walking the decoder's
/// distributions: STOP ends a path, as does reaching the cap or running out
/// of selectable agents.
pub fn enumerate_paths(params: &PolicyParams, instance: &Instance) -> Result<Vec<Path>> {
    let decoder = Decoder::new(params, instance)?;
    let cap = instance.rules().max_cardinality;
    let mut out = Vec::new();
    let mut stack = vec![(State::empty(instance.len()), Vec::new(), 1.0)];
    while let Some((state, actions, prob)) = stack.pop() {
        let probs = decoder.probs(&state)?.probs;
        let stop = probs.len() - 1;
        for (a, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let mut path = actions.clone();
            path.push(a);
            if a == stop {
                out.push(Path { actions: path, members: state.members(), prob: prob * p });
                continue;
            }
            let next = state.with_member(a)?;
            let open = (0..instance.len()).any(|i| next.is_selectable(i));
            if next.size() >= cap || !open {
                out.push(Path { actions: path, members: next.members(), prob: prob * p });
            } else {
                stack.push((next, path, prob * p));
            }
        }
    }
    Ok(out)
}

pub fn tiny_params(domain: Domain, seed: u64) -> PolicyParams {
    let attention = AttentionConfig { d_h: 8, heads: 2, d_ff: 8, blocks: 1 };
    PolicyParams::seeded(ModelConfig::new(domain, attention), seed).unwrap()
}

/// Random instance with up to 10 agents and 300 sets, in the given mode.
pub fn random_wsp(seed: u64, mode: PackingMode) -> WspInstance {
    let mut r = rng::stream(seed, &[]);
    let n = r.gen_range(1..=10);
    let count = r.gen_range(1..=300);
    let mut sets = Vec::with_capacity(count + n);
    if mode == PackingMode::Partition {
        sets.extend((0..n).map(|i| (vec![i], r.gen_range(-2.0..2.0))));
    }
    for _ in 0..count {
        let size = r.gen_range(1..=n.min(4));
        let members = sample(&mut r, n, size).into_vec();
        sets.push((members, r.gen_range(-1.0..5.0)));
    }
    WspInstance::new(n, sets, mode).unwrap()
}

