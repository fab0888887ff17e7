//! Weighted set packing: choose pairwise-disjoint sets of maximum total weight.
//!
//! [`solve_bnb`] is the production solver (depth-first branch and bound with a
//! greedy warm start), [`solve_bruteforce`] an exact dynamic program over agent
//! subsets used as a reference, and [`greedy_incumbent`] the warm start itself.

mod bnb;
mod brute;
mod greedy;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::domain::Collective;
use crate::error::{Error, Result};

pub use bnb::solve_bnb;
pub use brute::{solve_bruteforce, DEFAULT_BRUTEFORCE_AGENTS};
pub use greedy::greedy_incumbent;

/// Totals closer than this (relative) are treated as equal when checking.
pub const TOTAL_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackingMode {
    /// Every agent is covered at most once.
    Packing,
    /// Every agent is covered exactly once.
    Partition,
}

/// Fixed-width bit set over agents.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AgentMask(Vec<u64>);

impl AgentMask {
    pub fn empty(n: usize) -> AgentMask {
        AgentMask(vec![0; n.div_ceil(64).max(1)])
    }

    pub fn from_members(n: usize, members: &[usize]) -> AgentMask {
        let mut m = AgentMask::empty(n);
        for &i in members {
            m.insert(i);
        }
        m
    }

    pub fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    pub fn remove(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn intersects(&self, other: &AgentMask) -> bool {
        self.0.iter().zip(&other.0).any(|(a, b)| a & b != 0)
    }

    pub fn union_with(&mut self, other: &AgentMask) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a |= b);
    }

    pub fn difference_with(&mut self, other: &AgentMask) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a &= !b);
    }

    pub fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Lowest index below `n` that is not in the set.
    pub fn first_missing(&self, n: usize) -> Option<usize> {
        for (k, &w) in self.0.iter().enumerate() {
            if w != u64::MAX {
                let i = k * 64 + (!w).trailing_zeros() as usize;
                return (i < n).then_some(i);
            }
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedSet {
    members: Vec<usize>,
    mask: AgentMask,
    weight: f64,
}

impl WeightedSet {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn mask(&self) -> &AgentMask {
        &self.mask
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }
}

/// A set-packing problem over agents `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct WspInstance {
    n: usize,
    sets: Vec<WeightedSet>,
    mode: PackingMode,
}

impl WspInstance {
    /// Validates and builds an instance. Members are sorted.
    pub fn new(n: usize, sets: Vec<(Vec<usize>, f64)>, mode: PackingMode) -> Result<WspInstance> {
        let sets = sets
            .into_iter()
            .enumerate()
            .map(|(k, (mut members, weight))| {
                members.sort_unstable();
                let len = members.len();
                members.dedup();
                if members.is_empty() || members.len() != len || members[members.len() - 1] >= n {
                    return Err(Error::InvalidArgument(format!("set {k} = {members:?} is not a valid subset of 0..{n}")));
                }
                if !weight.is_finite() {
                    return Err(Error::InvalidArgument(format!("set {k} has weight {weight}")));
                }
                Ok(WeightedSet { mask: AgentMask::from_members(n, &members), members, weight })
            })
            .collect::<Result<_>>()?;
        Ok(WspInstance { n, sets, mode })
    }

    pub fn from_collectives(n: usize, collectives: &[Collective], mode: PackingMode) -> Result<WspInstance> {
        WspInstance::new(n, collectives.iter().map(|c| (c.members().to_vec(), c.value())).collect(), mode)
    }

    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn sets(&self) -> &[WeightedSet] {
        &self.sets
    }

    pub fn mode(&self) -> PackingMode {
        self.mode
    }

    /// In partition mode every agent must appear in some set.
    pub fn check_coverable(&self) -> Result<()> {
        if self.mode == PackingMode::Partition {
            let mut all = AgentMask::empty(self.n);
            for s in &self.sets {
                all.union_with(&s.mask);
            }
            if let Some(a) = all.first_missing(self.n) {
                return Err(Error::Infeasible(format!("agent {a} appears in no candidate set")));
            }
        }
        Ok(())
    }

    /// Packing made of the sets at `chosen`, with its invariants checked.
    pub fn packing(&self, chosen: &[usize], proven_optimal: bool, nodes_expanded: u64, wall_ms: u64) -> Result<Solution> {
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        let collectives = chosen
            .iter()
            .map(|&k| {
                let s = self.sets.get(k).ok_or_else(|| Error::InvalidArgument(format!("no set {k}")))?;
                Collective::from_parts(s.members.clone(), s.weight)
            })
            .collect::<Result<Vec<_>>>()?;
        let total = chosen.iter().map(|&k| self.sets[k].weight).sum();
        let packing = Packing { collectives, total, proven_optimal, nodes_expanded, wall_ms };
        packing.check(self.n, self.mode)?;
        Ok(Solution { chosen, packing })
    }
}

/// Disjoint collectives and their total value.
#[derive(Clone, Debug, PartialEq)]
pub struct Packing {
    pub collectives: Vec<Collective>,
    pub total: f64,
    /// True when the search finished, so `total` is optimal for the sets it was given.
    pub proven_optimal: bool,
    pub nodes_expanded: u64,
    pub wall_ms: u64,
}

#[derive(Serialize, Deserialize)]
struct PackingJson {
    chosen_members: Vec<Vec<usize>>,
    total: f64,
    proven_optimal: bool,
    nodes_expanded: u64,
    wall_ms: u64,
}

impl Packing {
    /// Disjointness, total consistency and, for partitions, full coverage.
    pub fn check(&self, n: usize, mode: PackingMode) -> Result<()> {
        let mut seen = AgentMask::empty(n);
        for c in &self.collectives {
            if c.members().iter().any(|&i| i >= n) {
                return Err(Error::Infeasible(format!("{:?} is out of range", c.members())));
            }
            let m = AgentMask::from_members(n, c.members());
            if seen.intersects(&m) {
                return Err(Error::Infeasible(format!("{:?} overlaps another collective", c.members())));
            }
            seen.union_with(&m);
        }
        let sum: f64 = self.collectives.iter().map(Collective::value).sum();
        if !totals_match(sum, self.total) {
            return Err(Error::Infeasible(format!("total {} differs from the sum {sum}", self.total)));
        }
        if mode == PackingMode::Partition {
            if let Some(a) = seen.first_missing(n) {
                return Err(Error::Infeasible(format!("agent {a} is not covered")));
            }
        }
        Ok(())
    }

    pub fn chosen_members(&self) -> Vec<Vec<usize>> {
        self.collectives.iter().map(|c| c.members().to_vec()).collect()
    }

    pub fn to_json(&self) -> String {
        let j = PackingJson {
            chosen_members: self.chosen_members(),
            total: self.total,
            proven_optimal: self.proven_optimal,
            nodes_expanded: self.nodes_expanded,
            wall_ms: self.wall_ms,
        };
        serde_json::to_string(&j).expect("plain data serializes")
    }
}

/// A packing together with the indices of the chosen sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    /// Ascending indices into the instance's set list.
    pub chosen: Vec<usize>,
    pub packing: Packing,
}

/// Relative comparison used for totals computed in different summation orders.
pub fn totals_match(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOTAL_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Writes one `{"members": [...], "value": v}` object per line.
pub fn write_collectives<W: Write>(mut w: W, collectives: &[Collective]) -> Result<()> {
    for c in collectives {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads the format of [`write_collectives`], skipping blank lines.
pub fn read_collectives<R: BufRead>(r: R) -> Result<Vec<Collective>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: Collective = serde_json::from_str(&line)?;
        out.push(Collective::from_parts(c.members().to_vec(), c.value())?);
    }
    Ok(out)
}
