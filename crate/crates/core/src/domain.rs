//! Agents, instances, collectives and the two synthetic benchmark domains.
//!
//! Both utilities are deterministic stand-ins chosen to be cheap and
//! reproducible:
//!
//! - **Ridesharing**: an agent is a trip between two zones of a 10x10 grid
//!   (coordinates normalized to `[0, 1]`). The value of a collective is the
//!   distance saved by sharing: the sum of solo Manhattan trip lengths minus
//!   the length of a shared route that picks everyone up before dropping
//!   anyone off. The shared route is built by nearest-neighbour from each
//!   possible first pickup, keeping the shortest.
//! - **Team formation**: an agent is a student `(gender, 4 personality
//!   traits, 7 competence levels)`. The value of a team is `ln(u)` with
//!   `u = balance * coverage * fit + 1e-6`, so maximizing the sum of values
//!   maximizes the product of team utilities.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Side length of the ridesharing zone grid.
pub const ZONE_GRID: u32 = 10;
/// Competence level every team is measured against.
pub const COMPETENCE_REQUIREMENT: f64 = 0.6;
/// Floor added to team utilities so their logarithm stays finite.
pub const TEAM_UTILITY_FLOOR: f64 = 1e-6;
/// Default bound on the number of collectives [`enumerate_feasible`] emits.
pub const DEFAULT_ENUMERATION_LIMIT: u128 = 2_000_000;

const RIDESHARING_DIM: usize = 4;
const TEAM_DIM: usize = 12;
const TRAITS: std::ops::Range<usize> = 1..5;
const COMPETENCES: std::ops::Range<usize> = 5..12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Ridesharing,
    TeamFormation,
}

impl Domain {
    pub fn feature_dim(self) -> usize {
        match self {
            Domain::Ridesharing => RIDESHARING_DIM,
            Domain::TeamFormation => TEAM_DIM,
        }
    }

    pub fn default_rules(self) -> DomainRules {
        match self {
            Domain::Ridesharing => DomainRules { max_cardinality: 5, partition_required: false },
            Domain::TeamFormation => DomainRules { max_cardinality: 3, partition_required: true },
        }
    }

    /// Inclusive range of feature `k`.
    pub fn feature_range(self, k: usize) -> (f64, f64) {
        match self {
            Domain::Ridesharing => (0.0, 1.0),
            Domain::TeamFormation if TRAITS.contains(&k) => (-1.0, 1.0),
            Domain::TeamFormation => (0.0, 1.0),
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Domain::Ridesharing => 0,
            Domain::TeamFormation => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Domain> {
        match tag {
            0 => Some(Domain::Ridesharing),
            1 => Some(Domain::TeamFormation),
            _ => None,
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Domain::Ridesharing => f.write_str("ridesharing"),
            Domain::TeamFormation => f.write_str("team_formation"),
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Domain> {
        match s {
            "ridesharing" => Ok(Domain::Ridesharing),
            "team_formation" | "team-formation" | "teams" => Ok(Domain::TeamFormation),
            other => Err(Error::InvalidArgument(format!("unknown domain `{other}`"))),
        }
    }
}

/// Structural constraints on collectives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainRules {
    pub max_cardinality: usize,
    /// Every agent must end up in exactly one collective.
    pub partition_required: bool,
}

/// Feature vector of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentFeatures(Vec<f64>);

impl AgentFeatures {
    pub fn new(domain: Domain, values: Vec<f64>) -> Result<AgentFeatures> {
        if values.len() != domain.feature_dim() {
            return Err(Error::InvalidArgument(format!(
                "{domain} agents have {} features, got {}",
                domain.feature_dim(),
                values.len()
            )));
        }
        for (k, &x) in values.iter().enumerate() {
            let (lo, hi) = domain.feature_range(k);
            if !(lo..=hi).contains(&x) {
                return Err(Error::InvalidArgument(format!(
                    "feature {k} = {x} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(AgentFeatures(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// A pool of agents from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    domain: Domain,
    seed: u64,
    agents: Vec<AgentFeatures>,
    rules: DomainRules,
}

impl Instance {
    pub fn new(domain: Domain, agents: Vec<AgentFeatures>, seed: u64) -> Result<Instance> {
        if agents.is_empty() {
            return Err(Error::InvalidArgument("an instance needs at least one agent".into()));
        }
        if let Some(bad) = agents.iter().find(|a| a.values().len() != domain.feature_dim()) {
            return Err(Error::InvalidArgument(format!(
                "agent with {} features in a {domain} instance",
                bad.values().len()
            )));
        }
        Ok(Instance { domain, seed, agents, rules: domain.default_rules() })
    }

    /// Replaces the default rules of the domain.
    pub fn with_rules(mut self, rules: DomainRules) -> Result<Instance> {
        if rules.max_cardinality == 0 {
            return Err(Error::InvalidArgument("max_cardinality must be positive".into()));
        }
        self.rules = rules;
        Ok(self)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn agents(&self) -> &[AgentFeatures] {
        &self.agents
    }

    pub fn rules(&self) -> DomainRules {
        self.rules
    }

    /// Same agents in a new order: agent `i` of the result is agent `order[i]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Instance> {
        let mut seen = vec![false; self.len()];
        if order.len() != self.len() || order.iter().any(|&i| i >= self.len() || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::InvalidArgument("order must be a permutation of the agents".into()));
        }
        let agents = order.iter().map(|&i| self.agents[i].clone()).collect();
        Ok(Instance { agents, ..self.clone() })
    }

    pub fn is_feasible(&self, members: &[usize]) -> bool {
        is_feasible(self, members)
    }

    /// Value of `members`, which must form a feasible collective.
    pub fn utility(&self, members: &[usize]) -> Result<f64> {
        utility(self, members)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&InstanceFile::from(self)).expect("instance serializes")
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, &InstanceFile::from(self))?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Instance> {
        let file: InstanceFile = serde_json::from_reader(reader)?;
        file.into_instance()
    }

    pub fn from_json(text: &str) -> Result<Instance> {
        Instance::read_json(text.as_bytes())
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    domain: Domain,
    seed: u64,
    n: usize,
    agents: Vec<Vec<f64>>,
}

impl From<&Instance> for InstanceFile {
    fn from(inst: &Instance) -> Self {
        InstanceFile {
            domain: inst.domain,
            seed: inst.seed,
            n: inst.len(),
            agents: inst
                .agents
                .iter()
                .map(|a| a.values().iter().map(|&x| round_significant(x)).collect())
                .collect(),
        }
    }
}

impl InstanceFile {
    fn into_instance(self) -> Result<Instance> {
        if self.n != self.agents.len() {
            return Err(Error::InvalidArgument(format!(
                "instance declares n = {} but lists {} agents",
                self.n,
                self.agents.len()
            )));
        }
        let agents = self
            .agents
            .into_iter()
            .map(|v| AgentFeatures::new(self.domain, v))
            .collect::<Result<Vec<_>>>()?;
        Instance::new(self.domain, agents, self.seed)
    }
}

/// Rounds to nine significant digits.
fn round_significant(x: f64) -> f64 {
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Anything that assigns values to collectives of a fixed agent pool.
pub trait Valuation: Sync {
    fn agent_count(&self) -> usize;
    fn rules(&self) -> DomainRules;
    /// Value of a feasible collective given as sorted agent indices.
    fn value(&self, members: &[usize]) -> Result<f64>;
}

impl Valuation for Instance {
    fn agent_count(&self) -> usize {
        self.len()
    }

    fn rules(&self) -> DomainRules {
        self.rules
    }

    fn value(&self, members: &[usize]) -> Result<f64> {
        utility(self, members)
    }
}

/// A nonempty set of agents together with its value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collective {
    members: Vec<usize>,
    value: f64,
}

impl Collective {
    /// Sorts `members`, checks feasibility and evaluates the utility.
    pub fn new<V: Valuation + ?Sized>(valuation: &V, mut members: Vec<usize>) -> Result<Collective> {
        members.sort_unstable();
        let value = valuation.value(&members)?;
        Ok(Collective { members, value })
    }

    /// Builds a collective with a value computed elsewhere.
    ///
    /// Members are sorted and deduplicated; the value is trusted.
    pub fn from_parts(mut members: Vec<usize>, value: f64) -> Result<Collective> {
        members.sort_unstable();
        let len = members.len();
        members.dedup();
        if members.is_empty() || members.len() != len {
            return Err(Error::InfeasibleCollective(format!("{members:?} is empty or has duplicates")));
        }
        Ok(Collective { members, value })
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Draws `n` agents uniformly from the domain's feature space.
pub fn generate_instance(domain: Domain, n: usize, seed: u64) -> Result<Instance> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, &[domain.tag() as u64]);
    let scale = (ZONE_GRID - 1) as f64;
    let agents = (0..n)
        .map(|_| {
            let values = match domain {
                Domain::Ridesharing => {
                    let origin = (rng.gen_range(0..ZONE_GRID), rng.gen_range(0..ZONE_GRID));
                    let mut dest = origin;
                    while dest == origin {
                        dest = (rng.gen_range(0..ZONE_GRID), rng.gen_range(0..ZONE_GRID));
                    }
                    vec![
                        origin.0 as f64 / scale,
                        origin.1 as f64 / scale,
                        dest.0 as f64 / scale,
                        dest.1 as f64 / scale,
                    ]
                }
                Domain::TeamFormation => {
                    let mut v = Vec::with_capacity(TEAM_DIM);
                    v.push(if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
                    v.extend((0..TRAITS.len()).map(|_| rng.gen_range(-1.0..=1.0)));
                    v.extend((0..COMPETENCES.len()).map(|_| rng.gen_range(0.0..=1.0)));
                    v
                }
            };
            AgentFeatures(values)
        })
        .collect();
    Instance::new(domain, agents, seed)
}

/// True iff `members` is nonempty, duplicate-free, in range and within the cap.
pub fn is_feasible(instance: &Instance, members: &[usize]) -> bool {
    check_feasible(instance.len(), instance.rules.max_cardinality, members).is_ok()
}

pub(crate) fn check_feasible(n: usize, cap: usize, members: &[usize]) -> Result<()> {
    if members.is_empty() {
        return Err(Error::InfeasibleCollective("empty collective".into()));
    }
    if members.len() > cap {
        return Err(Error::InfeasibleCollective(format!(
            "{} members exceed the cap of {cap}",
            members.len()
        )));
    }
    let mut seen = vec![false; n];
    for &i in members {
        if i >= n {
            return Err(Error::InfeasibleCollective(format!("agent {i} out of range (n = {n})")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InfeasibleCollective(format!("agent {i} appears twice")));
        }
    }
    Ok(())
}

/// Value of a feasible collective. Member order does not matter.
pub fn utility(instance: &Instance, members: &[usize]) -> Result<f64> {
    check_feasible(instance.len(), instance.rules.max_cardinality, members)?;
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let feats: Vec<&[f64]> = sorted.iter().map(|&i| instance.agents[i].values()).collect();
    Ok(match instance.domain {
        Domain::Ridesharing => ridesharing_value(&feats),
        Domain::TeamFormation => team_utility(&feats).ln(),
    })
}

type Point = (f64, f64);

fn manhattan(a: Point, b: Point) -> f64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

fn ridesharing_value(trips: &[&[f64]]) -> f64 {
    let origins: Vec<Point> = trips.iter().map(|t| (t[0], t[1])).collect();
    let dests: Vec<Point> = trips.iter().map(|t| (t[2], t[3])).collect();
    let solo: f64 = origins.iter().zip(&dests).map(|(&o, &d)| manhattan(o, d)).sum();
    solo - shared_route_length(&origins, &dests)
}

/// Nearest-neighbour tour over all pickups then all drop-offs, minimized over
/// the first pickup. Ties go to the lexicographically smaller point, so the
/// length depends only on the multiset of trips.
pub(crate) fn shared_route_length(origins: &[Point], dests: &[Point]) -> f64 {
    (0..origins.len())
        .map(|first| {
            let mut pending: Vec<Point> = origins.to_vec();
            let mut at = pending.swap_remove(first);
            let mut length = 0.0;
            while !pending.is_empty() {
                let next = nearest(at, &pending);
                length += manhattan(at, pending[next]);
                at = pending.swap_remove(next);
            }
            let mut pending: Vec<Point> = dests.to_vec();
            while !pending.is_empty() {
                let next = nearest(at, &pending);
                length += manhattan(at, pending[next]);
                at = pending.swap_remove(next);
            }
            length
        })
        .fold(f64::INFINITY, f64::min)
}

fn nearest(from: Point, candidates: &[Point]) -> usize {
    let key = |p: &Point| (manhattan(from, *p), p.0, p.1);
    let mut best = 0;
    for (i, p) in candidates.iter().enumerate().skip(1) {
        let (a, b) = (key(p), key(&candidates[best]));
        let ord = a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.total_cmp(&b.2));
        if ord == Ordering::Less {
            best = i;
        }
    }
    best
}

/// Team utility in `(0, 1]` before the logarithm.
pub(crate) fn team_utility(students: &[&[f64]]) -> f64 {
    let size = students.len() as f64;
    let female_share = students.iter().map(|s| s[0]).sum::<f64>() / size;
    let balance = 1.0 - (female_share - 0.5).abs();

    let mut spread_sum = 0.0;
    let mut pairs = 0usize;
    for (i, a) in students.iter().enumerate() {
        for b in &students[i + 1..] {
            spread_sum += TRAITS.map(|k| (a[k] - b[k]).abs()).sum::<f64>() / TRAITS.len() as f64;
            pairs += 1;
        }
    }
    let spread = if pairs == 0 { 0.0 } else { spread_sum / pairs as f64 };
    let coverage = (1.0 + spread) / 3.0;

    let gap = COMPETENCES
        .map(|k| {
            let best = students.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max);
            (best - COMPETENCE_REQUIREMENT).abs()
        })
        .sum::<f64>()
        / COMPETENCES.len() as f64;
    let fit = 1.0 - gap;

    balance * coverage * fit + TEAM_UTILITY_FLOOR
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Number of feasible collectives for `n` agents and cardinality cap `cap`.
pub fn feasible_count(n: usize, cap: usize) -> u128 {
    (1..=cap.min(n)).map(|k| binomial(n as u128, k as u128)).fold(0u128, u128::saturating_add)
}

/// Every feasible collective, by size and then lexicographically.
pub fn enumerate_feasible(instance: &Instance, limit: u128) -> Result<Vec<Collective>> {
    enumerate_with(instance, limit)
}

pub(crate) fn enumerate_with<V: Valuation + ?Sized>(valuation: &V, limit: u128) -> Result<Vec<Collective>> {
    let n = valuation.agent_count();
    let cap = valuation.rules().max_cardinality.min(n);
    let count = feasible_count(n, cap);
    if count > limit {
        return Err(Error::EnumerationTooLarge { count, limit });
    }
    let mut out = Vec::with_capacity(count as usize);
    for size in 1..=cap {
        let mut combo: Vec<usize> = (0..size).collect();
        loop {
            out.push(Collective { value: valuation.value(&combo)?, members: combo.clone() });
            // advance to the next combination in lexicographic order
            let mut i = size;
            while i > 0 && combo[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            combo[i - 1] += 1;
            for j in i..size {
                combo[j] = combo[j - 1] + 1;
            }
        }
    }
    Ok(out)
}
