//! UCT search over incremental packing construction.
//!
//! A search state is a list of committed collectives plus the collective under
//! construction. Actions add an unassigned agent to the partial collective
//! (while it is below the cardinality cap) or close it; closing an empty
//! partial collective ends the packing. In partition mode a packing that ends
//! with uncovered agents is a dead end.
//!
//! The three baselines differ only in the rollout policy used to finish a
//! packing from a newly expanded node.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::domain::{Collective, Valuation};
use crate::error::{Error, Result};
use crate::rng;
use crate::solve::Packing;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutPolicy {
    /// Best immediate value increment, lowest action index on ties.
    Greedy,
    /// Uniform over actions that keep a feasible completion possible.
    Adapted,
    /// Uniform over all available actions.
    Random,
}

impl RolloutPolicy {
    pub fn method_name(self) -> &'static str {
        match self {
            RolloutPolicy::Greedy => "G-MCTS",
            RolloutPolicy::Adapted => "A-MCTS",
            RolloutPolicy::Random => "R-MCTS",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MctsConfig {
    /// UCB1 exploration constant.
    pub exploration: f64,
    pub rollout: RolloutPolicy,
    /// Iterations in count mode.
    pub budget: Budget,
    pub seed: u64,
}

impl MctsConfig {
    pub fn new(rollout: RolloutPolicy, budget: Budget, seed: u64) -> MctsConfig {
        MctsConfig { exploration: std::f64::consts::SQRT_2, rollout, budget, seed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Add(usize),
    Close,
}

/// Committed collectives plus the collective being built.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchState {
    assigned: Vec<bool>,
    partial: Vec<usize>,
    committed: Vec<Collective>,
    total: f64,
    ended: bool,
}

impl SearchState {
    pub fn new(n: usize) -> SearchState {
        SearchState { assigned: vec![false; n], partial: Vec::new(), committed: Vec::new(), total: 0.0, ended: false }
    }

    pub fn partial(&self) -> &[usize] {
        &self.partial
    }

    pub fn committed(&self) -> &[Collective] {
        &self.committed
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    fn free(&self, a: usize) -> bool {
        !self.assigned[a] && !self.partial.contains(&a)
    }

    fn uncovered(&self) -> usize {
        self.assigned.iter().filter(|&&x| !x).count()
    }

    pub fn is_terminal(&self) -> bool {
        self.ended || (self.partial.is_empty() && self.uncovered() == 0)
    }

    /// A terminal state that leaves agents uncovered in partition mode.
    pub fn is_dead_end(&self, partition: bool) -> bool {
        self.is_terminal() && partition && self.uncovered() > 0
    }

    /// Every action allowed by the rules, agents in index order then close.
    pub fn actions(&self, cap: usize) -> Vec<Action> {
        if self.is_terminal() {
            return Vec::new();
        }
        let mut out = Vec::new();
        if self.partial.len() < cap {
            out.extend((0..self.assigned.len()).filter(|&a| self.free(a)).map(Action::Add));
        }
        out.push(Action::Close);
        out
    }
}

/// Evaluates and caches collective values.
struct Evaluator<'a, V: Valuation + ?Sized> {
    valuation: &'a V,
    cache: HashMap<Vec<usize>, f64>,
}

impl<V: Valuation + ?Sized> Evaluator<'_, V> {
    fn value(&mut self, members: &[usize]) -> Result<f64> {
        let mut key = members.to_vec();
        key.sort_unstable();
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let v = self.valuation.value(&key)?;
        self.cache.insert(key, v);
        Ok(v)
    }

    fn apply(&mut self, state: &mut SearchState, action: Action) -> Result<()> {
        match action {
            Action::Add(a) => {
                if !state.free(a) {
                    return Err(Error::InvalidArgument(format!("agent {a} is not available")));
                }
                state.partial.push(a);
            }
            Action::Close if state.partial.is_empty() => state.ended = true,
            Action::Close => {
                let members = std::mem::take(&mut state.partial);
                let value = self.value(&members)?;
                for &m in &members {
                    state.assigned[m] = true;
                }
                state.total += value;
                state.committed.push(Collective::from_parts(members, value)?);
            }
        }
        Ok(())
    }

    /// Value increment of an action: `f(S + a) - f(S)` for adds (with
    /// `f(empty) = 0`), zero for close.
    fn delta(&mut self, state: &SearchState, action: Action) -> Result<f64> {
        match action {
            Action::Close => Ok(0.0),
            Action::Add(a) => {
                let before = if state.partial.is_empty() { 0.0 } else { self.value(&state.partial)? };
                let mut with = state.partial.clone();
                with.push(a);
                Ok(self.value(&with)? - before)
            }
        }
    }
}

/// One step of a rollout policy. `None` when the state is terminal or no
/// action satisfies the policy.
fn policy_step<V: Valuation + ?Sized>(
    eval: &mut Evaluator<'_, V>,
    state: &SearchState,
    policy: RolloutPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Action>> {
    let rules = eval.valuation.rules();
    let mut actions = state.actions(rules.max_cardinality);
    match policy {
        RolloutPolicy::Random => Ok(actions.choose(rng).copied()),
        RolloutPolicy::Adapted => {
            if rules.partition_required && state.partial.is_empty() && state.uncovered() > 0 {
                actions.retain(|&a| a != Action::Close);
            }
            Ok(actions.choose(rng).copied())
        }
        RolloutPolicy::Greedy => {
            let mut best: Option<(f64, Action)> = None;
            for a in actions {
                let d = eval.delta(state, a)?;
                if best.map_or(true, |(bd, _)| d > bd) {
                    best = Some((d, a));
                }
            }
            Ok(best.map(|(_, a)| a))
        }
    }
}

/// The action a rollout policy takes in `state`.
pub fn rollout_policy_step<V: Valuation + ?Sized>(
    valuation: &V,
    state: &SearchState,
    policy: RolloutPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<Action> {
    let mut eval = Evaluator { valuation, cache: HashMap::new() };
    policy_step(&mut eval, state, policy, rng)?.ok_or(Error::DeadEnd)
}

/// Index of the child maximizing `mean + c * sqrt(ln(parent_visits) / visits)`;
/// unvisited children come first, ties go to the lowest index.
pub fn ucb1_select(children: &[(f64, u64)], parent_visits: u64, exploration: f64) -> Option<usize> {
    let log_n = (parent_visits.max(1) as f64).ln();
    let mut best: Option<(f64, usize)> = None;
    for (i, &(mean, visits)) in children.iter().enumerate() {
        let score = if visits == 0 { f64::INFINITY } else { mean + exploration * (log_n / visits as f64).sqrt() };
        if best.map_or(true, |(b, _)| score > b) {
            best = Some((score, i));
        }
    }
    best.map(|(_, i)| i)
}

struct Node {
    state: SearchState,
    children: Vec<usize>,
    untried: Vec<Action>,
    visits: u64,
    feasible_visits: u64,
    value_sum: f64,
}

/// Result of a search.
#[derive(Clone, Debug, PartialEq)]
pub struct MctsOutcome {
    /// Best complete packing seen; `None` if every rollout dead-ended.
    pub packing: Option<Packing>,
    pub iterations: u64,
    pub tree_nodes: usize,
    pub dead_ends: u64,
}

struct Search<'a, V: Valuation + ?Sized> {
    eval: Evaluator<'a, V>,
    config: MctsConfig,
    partition: bool,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    best: Option<SearchState>,
    lo: f64,
    hi: f64,
    dead_ends: u64,
}

impl<V: Valuation + ?Sized> Search<'_, V> {
    fn node(&self, state: SearchState) -> Node {
        let untried = state.actions(self.eval.valuation.rules().max_cardinality);
        Node { state, children: Vec::new(), untried, visits: 0, feasible_visits: 0, value_sum: 0.0 }
    }

    /// Finishes a packing with the rollout policy. `None` on a dead end.
    fn rollout(&mut self, mut state: SearchState) -> Result<Option<f64>> {
        while !state.is_terminal() {
            match policy_step(&mut self.eval, &state, self.config.rollout, &mut self.rng)? {
                Some(a) => self.eval.apply(&mut state, a)?,
                None => return Ok(None),
            }
        }
        if state.is_dead_end(self.partition) {
            return Ok(None);
        }
        let total = state.total;
        self.lo = self.lo.min(total);
        self.hi = self.hi.max(total);
        if self.best.as_ref().map_or(true, |b| total > b.total) {
            self.best = Some(state);
        }
        Ok(Some(total))
    }

    fn mean_reward(&self, node: &Node) -> f64 {
        if node.visits == 0 {
            return 0.0;
        }
        let span = self.hi - self.lo;
        let lifted = node.value_sum - self.lo * node.feasible_visits as f64;
        let scaled = if span > 0.0 { lifted / span } else { node.feasible_visits as f64 };
        scaled / node.visits as f64
    }

    fn iterate(&mut self) -> Result<()> {
        let mut path = vec![0];
        let mut current = 0;
        while self.nodes[current].untried.is_empty() && !self.nodes[current].children.is_empty() {
            let stats: Vec<(f64, u64)> = self.nodes[current]
                .children
                .iter()
                .map(|&c| (self.mean_reward(&self.nodes[c]), self.nodes[c].visits))
                .collect();
            let pick = ucb1_select(&stats, self.nodes[current].visits, self.config.exploration).expect("has children");
            current = self.nodes[current].children[pick];
            path.push(current);
        }
        if !self.nodes[current].untried.is_empty() {
            let k = self.rng.gen_range(0..self.nodes[current].untried.len());
            let action = self.nodes[current].untried.swap_remove(k);
            let mut state = self.nodes[current].state.clone();
            self.eval.apply(&mut state, action)?;
            let child = self.node(state);
            self.nodes.push(child);
            let id = self.nodes.len() - 1;
            self.nodes[current].children.push(id);
            path.push(id);
            current = id;
        }
        let outcome = self.rollout(self.nodes[current].state.clone())?;
        if outcome.is_none() {
            self.dead_ends += 1;
        }
        for id in path {
            let node = &mut self.nodes[id];
            node.visits += 1;
            if let Some(v) = outcome {
                node.feasible_visits += 1;
                node.value_sum += v;
            }
        }
        Ok(())
    }
}

/// UCT search; returns the best complete packing found by any rollout.
///
/// One rollout from the root always runs, so a zero budget still yields the
/// rollout policy's own packing (unless it dead-ends).
pub fn mcts_search<V: Valuation + ?Sized>(valuation: &V, config: MctsConfig) -> Result<MctsOutcome> {
    if !(config.exploration >= 0.0 && config.exploration.is_finite()) {
        return Err(Error::InvalidArgument(format!("exploration constant {}", config.exploration)));
    }
    if config.budget == Budget::Unlimited {
        return Err(Error::InvalidArgument("tree search needs a finite budget".into()));
    }
    let n = valuation.agent_count();
    let partition = valuation.rules().partition_required;
    let mut search = Search {
        eval: Evaluator { valuation, cache: HashMap::new() },
        config,
        partition,
        rng: rng::stream(config.seed, &[0x6d63_7473]),
        nodes: Vec::new(),
        best: None,
        lo: f64::INFINITY,
        hi: f64::NEG_INFINITY,
        dead_ends: 0,
    };
    let root = search.node(SearchState::new(n));
    search.nodes.push(root);
    let mut meter = config.budget.meter();
    let first = search.rollout(SearchState::new(n))?;
    if first.is_none() {
        search.dead_ends += 1;
    }
    while meter.try_consume() {
        search.iterate()?;
    }
    let packing = search.best.map(|s| Packing {
        collectives: s.committed,
        total: s.total,
        proven_optimal: false,
        nodes_expanded: meter.used(),
        wall_ms: meter.elapsed_ms(),
    });
    Ok(MctsOutcome { packing, iterations: meter.used(), tree_nodes: search.nodes.len(), dead_ends: search.dead_ends })
}
