//! The encoder-decoder policy.
//!
//! The encoder maps the pool of agents to one row per agent. The decoder
//! summarizes the partial collective as the mean of its members' rows (or a
//! learned placeholder when empty), lets that summary attend over the pool
//! plus a STOP row, and scores every row with a clipped compatibility. The
//! softmax over those scores is the distribution of the next action: add
//! agent `i` for `i < n`, or STOP for index `n`.

mod params;
mod trace;

use rand::{Rng, RngCore};

use crate::domain::{Collective, Instance};
use crate::error::{shape_err, Error, Result};
use crate::nn::{softmax_in_place, AttentionCache, EncoderBlockCache, KeyValues, Matrix};

pub use params::{ModelConfig, PolicyParams, DEFAULT_GAMMA};
pub use trace::{replay, sample_traced, Trace};

/// A partial collective, plus agents that are no longer available.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct State {
    partial: Vec<bool>,
    blocked: Vec<bool>,
}

impl State {
    pub fn empty(n: usize) -> State {
        State { partial: vec![false; n], blocked: vec![false; n] }
    }

    /// Empty collective over a pool where `blocked` agents are already taken.
    pub fn with_blocked(blocked: Vec<bool>) -> State {
        State { partial: vec![false; blocked.len()], blocked }
    }

    pub fn from_members(n: usize, members: &[usize]) -> Result<State> {
        members.iter().try_fold(State::empty(n), |s, &i| s.with_member(i))
    }

    pub fn agent_count(&self) -> usize {
        self.partial.len()
    }

    pub fn partial(&self) -> &[bool] {
        &self.partial
    }

    pub fn blocked(&self) -> &[bool] {
        &self.blocked
    }

    pub fn members(&self) -> Vec<usize> {
        self.partial.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn size(&self) -> usize {
        self.partial.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.partial.iter().any(|&b| b)
    }

    pub fn is_selectable(&self, agent: usize) -> bool {
        agent < self.partial.len() && !self.partial[agent] && !self.blocked[agent]
    }

    /// The state after adding `agent`.
    pub fn with_member(&self, agent: usize) -> Result<State> {
        if !self.is_selectable(agent) {
            return Err(Error::InvalidArgument(format!("agent {agent} cannot join this collective")));
        }
        let mut next = self.clone();
        next.partial[agent] = true;
        Ok(next)
    }

    /// `n + 1` flags, `true` where the action is forbidden.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask: Vec<bool> = self.partial.iter().zip(&self.blocked).map(|(&p, &b)| p || b).collect();
        mask.push(self.is_empty());
        mask
    }
}

/// The next-action distribution. Index `n` is STOP.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub probs: Vec<f64>,
    /// `-inf` at masked entries.
    pub log_probs: Vec<f64>,
    /// In nats.
    pub entropy: f64,
}

impl PolicyOutput {
    pub fn stop_index(&self) -> usize {
        self.probs.len() - 1
    }
}

/// Softmax over `gamma * tanh(u)` with masked entries removed.
pub fn clipped_softmax(u: &[f64], mask: &[bool], gamma: f64) -> Result<PolicyOutput> {
    if u.len() != mask.len() {
        return shape_err(format!("{} compatibilities for a mask of {}", u.len(), mask.len()));
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::NoActionAvailable);
    }
    let logits: Vec<f64> =
        u.iter().zip(mask).map(|(&x, &m)| if m { f64::NEG_INFINITY } else { gamma * x.tanh() }).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let log_probs: Vec<f64> = logits.iter().map(|&z| z - lse).collect();
    let mut probs = logits;
    softmax_in_place(&mut probs);
    let entropy = -probs.iter().zip(&log_probs).filter(|(&p, _)| p > 0.0).map(|(p, lp)| p * lp).sum::<f64>();
    Ok(PolicyOutput { probs, log_probs, entropy })
}

/// How the next action is chosen.
pub enum Selection<'a> {
    Sample(&'a mut dyn RngCore),
    /// Highest probability, lowest index on ties.
    Greedy,
}

enum Chooser<'a, 'b> {
    Sample(&'a mut dyn RngCore),
    Greedy,
    Forced(&'b [usize]),
}

impl Chooser<'_, '_> {
    fn choose(&mut self, step: usize, out: &PolicyOutput) -> Result<usize> {
        match self {
            Chooser::Greedy => Ok(argmax(&out.probs)),
            Chooser::Sample(rng) => {
                let r: f64 = rng.gen();
                let mut acc = 0.0;
                let mut last = None;
                for (i, &p) in out.probs.iter().enumerate() {
                    if p > 0.0 {
                        acc += p;
                        last = Some(i);
                        if r < acc {
                            return Ok(i);
                        }
                    }
                }
                last.ok_or(Error::NoActionAvailable)
            }
            Chooser::Forced(actions) => {
                let a = *actions
                    .get(step)
                    .ok_or_else(|| Error::InvalidArgument(format!("trajectory ended early at step {step}")))?;
                if a >= out.probs.len() || out.probs[a] == 0.0 {
                    return Err(Error::InvalidArgument(format!("action {a} is not available at step {step}")));
                }
                Ok(a)
            }
        }
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A completed collective with the per-step statistics of its construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub collective: Collective,
    /// Chosen action indices; `n` is STOP.
    pub actions: Vec<usize>,
    pub step_log_probs: Vec<f64>,
    pub step_entropies: Vec<f64>,
}

impl Rollout {
    pub fn log_prob(&self) -> f64 {
        self.step_log_probs.iter().sum()
    }

    pub fn entropy(&self) -> f64 {
        self.step_entropies.iter().sum()
    }
}

/// The encoded pool with the decoder's per-pool projections.
#[derive(Clone, Debug)]
pub struct PoolEncoding {
    pool: Matrix,
    /// Pool rows followed by the STOP row.
    memory: Matrix,
    kv: KeyValues,
    keys: Matrix,
}

impl PoolEncoding {
    fn from_pool(params: &PolicyParams, pool: Matrix) -> Result<PoolEncoding> {
        if pool.cols() != params.d_h() {
            return shape_err(format!("pool encoding has width {}, model has {}", pool.cols(), params.d_h()));
        }
        let memory = pool.vstack(&params.stop)?;
        let kv = params.glimpse.project(&memory)?;
        let keys = memory.matmul(&params.key_proj)?;
        Ok(PoolEncoding { pool, memory, kv, keys })
    }

    /// `n x d_h`.
    pub fn pool(&self) -> &Matrix {
        &self.pool
    }

    pub fn agent_count(&self) -> usize {
        self.pool.rows()
    }
}

struct EncoderTrace {
    input: Matrix,
    blocks: Vec<EncoderBlockCache>,
}

fn features(instance: &Instance) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = instance.agents().iter().map(|a| a.values().to_vec()).collect();
    Matrix::from_rows(&rows)
}

fn encode_traced(params: &PolicyParams, instance: &Instance) -> Result<(PoolEncoding, EncoderTrace)> {
    if instance.is_empty() {
        return Err(Error::InvalidArgument("empty instance".into()));
    }
    let input = features(instance)?;
    let mut h = params.embed.forward(&input)?;
    let mut blocks = Vec::with_capacity(params.encoder.len());
    for block in &params.encoder {
        let (next, cache) = block.forward(&h)?;
        blocks.push(cache);
        h = next;
    }
    Ok((PoolEncoding::from_pool(params, h)?, EncoderTrace { input, blocks }))
}

/// Input layer followed by the encoder blocks: one `d_h` row per agent.
pub fn encode_pool(params: &PolicyParams, instance: &Instance) -> Result<Matrix> {
    Ok(encode_traced(params, instance)?.0.pool)
}

/// Mean of the member rows, or the placeholder for an empty collective.
pub fn encode_collective(params: &PolicyParams, pool: &Matrix, partial: &[bool]) -> Result<Vec<f64>> {
    if partial.len() != pool.rows() {
        return shape_err(format!("{} membership flags for {} agents", partial.len(), pool.rows()));
    }
    let members: Vec<usize> = (0..partial.len()).filter(|&i| partial[i]).collect();
    Ok(summary(params, pool, &members))
}

fn summary(params: &PolicyParams, pool: &Matrix, members: &[usize]) -> Vec<f64> {
    if members.is_empty() {
        return params.placeholder.data().to_vec();
    }
    let mut h = vec![0.0; pool.cols()];
    for &m in members {
        for (a, b) in h.iter_mut().zip(pool.row(m)) {
            *a += b;
        }
    }
    let k = members.len() as f64;
    h.iter_mut().for_each(|x| *x /= k);
    h
}

struct Step {
    glimpse_cache: AttentionCache,
    glimpse: Matrix,
    query: Matrix,
    u: Vec<f64>,
    output: PolicyOutput,
}

fn decode_step(params: &PolicyParams, enc: &PoolEncoding, h_s: Vec<f64>, mask: &[bool]) -> Result<Step> {
    if mask.len() != enc.memory.rows() {
        return shape_err(format!("mask of {} for {} actions", mask.len(), enc.memory.rows()));
    }
    let h_s = Matrix::row_vector(h_s);
    let (glimpse, glimpse_cache) = params.glimpse.attend(&h_s, &enc.kv)?;
    let query = glimpse.matmul(&params.query_proj)?;
    let scale = 1.0 / (params.d_h() as f64).sqrt();
    let u: Vec<f64> = enc.keys.matmul_t(&query)?.data().iter().map(|x| x * scale).collect();
    let output = clipped_softmax(&u, mask, params.config.gamma)?;
    Ok(Step { glimpse_cache, glimpse, query, u, output })
}

/// Next-action distribution for a pool encoding, collective summary and mask
/// (`n + 1` flags, `true` = forbidden).
pub fn decode_probs(params: &PolicyParams, pool: &Matrix, h_s: &[f64], mask: &[bool]) -> Result<PolicyOutput> {
    if h_s.len() != params.d_h() {
        return shape_err(format!("collective summary of width {}", h_s.len()));
    }
    let enc = PoolEncoding::from_pool(params, pool.clone())?;
    Ok(decode_step(params, &enc, h_s.to_vec(), mask)?.output)
}

/// Result of the decoding loop, optionally with what backward needs.
struct Decoded {
    rollout: Rollout,
    steps: Vec<(Vec<usize>, Step)>,
}

fn decode(
    params: &PolicyParams,
    instance: &Instance,
    enc: &PoolEncoding,
    start: &State,
    mut chooser: Chooser<'_, '_>,
    keep_steps: bool,
) -> Result<Decoded> {
    let n = instance.len();
    if start.agent_count() != n {
        return Err(Error::InvalidArgument(format!("state over {} agents for a pool of {n}", start.agent_count())));
    }
    let cap = instance.rules().max_cardinality;
    if start.size() > cap {
        return Err(Error::InfeasibleCollective(format!("start state has {} members, cap is {cap}", start.size())));
    }
    let mut state = start.clone();
    let mut actions = Vec::new();
    let mut step_log_probs = Vec::new();
    let mut step_entropies = Vec::new();
    let mut steps = Vec::new();
    while state.size() < cap {
        let mask = state.mask();
        if mask[..n].iter().all(|&m| m) {
            if state.is_empty() {
                return Err(Error::NoActionAvailable);
            }
            break;
        }
        let members = state.members();
        let step = decode_step(params, enc, summary(params, &enc.pool, &members), &mask)?;
        let a = chooser.choose(actions.len(), &step.output)?;
        actions.push(a);
        step_log_probs.push(step.output.log_probs[a]);
        step_entropies.push(step.output.entropy);
        if keep_steps {
            steps.push((members, step));
        }
        if a == n {
            break;
        }
        state = state.with_member(a)?;
    }
    if let Chooser::Forced(forced) = chooser {
        if forced.len() != actions.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory of {} actions terminates after {}",
                forced.len(),
                actions.len()
            )));
        }
    }
    let collective = Collective::new(instance, state.members())?;
    Ok(Decoded { rollout: Rollout { collective, actions, step_log_probs, step_entropies }, steps })
}

/// A policy bound to one instance, with the pool encoded once.
pub struct Decoder<'a> {
    params: &'a PolicyParams,
    instance: &'a Instance,
    encoding: PoolEncoding,
}

impl<'a> Decoder<'a> {
    pub fn new(params: &'a PolicyParams, instance: &'a Instance) -> Result<Decoder<'a>> {
        let (encoding, _) = encode_traced(params, instance)?;
        Ok(Decoder { params, instance, encoding })
    }

    pub fn encoding(&self) -> &PoolEncoding {
        &self.encoding
    }

    pub fn instance(&self) -> &Instance {
        self.instance
    }

    /// Next-action distribution at `state`.
    pub fn probs(&self, state: &State) -> Result<PolicyOutput> {
        let h_s = summary(self.params, &self.encoding.pool, &state.members());
        Ok(decode_step(self.params, &self.encoding, h_s, &state.mask())?.output)
    }

    pub fn rollout(&self, start: &State, selection: Selection<'_>) -> Result<Rollout> {
        let chooser = match selection {
            Selection::Sample(rng) => Chooser::Sample(rng),
            Selection::Greedy => Chooser::Greedy,
        };
        Ok(decode(self.params, self.instance, &self.encoding, start, chooser, false)?.rollout)
    }

    /// Log-probability of building the collective through `actions` from `start`.
    pub fn trajectory_log_prob(&self, start: &State, actions: &[usize]) -> Result<f64> {
        Ok(decode(self.params, self.instance, &self.encoding, start, Chooser::Forced(actions), false)?
            .rollout
            .log_prob())
    }

    /// Repeated greedy rollouts over the agents not yet assigned, until
    /// every agent belongs to a collective.
    pub fn greedy_packing(&self) -> Result<GreedyPacking> {
        let n = self.instance.len();
        let mut assigned = vec![false; n];
        let mut collectives = Vec::new();
        while assigned.iter().any(|&a| !a) {
            let r = self.rollout(&State::with_blocked(assigned.clone()), Selection::Greedy)?;
            for &m in r.collective.members() {
                assigned[m] = true;
            }
            collectives.push(r.collective);
        }
        let total = collectives.iter().map(Collective::value).sum();
        Ok(GreedyPacking { collectives, total })
    }
}

/// Disjoint collectives found by [`Decoder::greedy_packing`].
#[derive(Clone, Debug, PartialEq)]
pub struct GreedyPacking {
    pub collectives: Vec<Collective>,
    pub total: f64,
}

/// Encodes the pool and builds one collective from `start`.
pub fn rollout(params: &PolicyParams, instance: &Instance, start: &State, selection: Selection<'_>) -> Result<Rollout> {
    Decoder::new(params, instance)?.rollout(start, selection)
}

pub fn trajectory_log_prob(params: &PolicyParams, instance: &Instance, start: &State, actions: &[usize]) -> Result<f64> {
    Decoder::new(params, instance)?.trajectory_log_prob(start, actions)
}

/// Total value of the greedy sequential packing of `instance`.
pub fn greedy_packing_value(params: &PolicyParams, instance: &Instance) -> Result<f64> {
    Ok(Decoder::new(params, instance)?.greedy_packing()?.total)
}

/// Checks that `instance` belongs to the domain the model was built for.
pub fn check_compatible(params: &PolicyParams, instance: &Instance) -> Result<()> {
    if instance.domain() != params.config.domain {
        return Err(Error::Config(format!(
            "model was trained for {} but the instance is {}",
            params.config.domain,
            instance.domain()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
