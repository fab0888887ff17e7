//! Budgeted candidate-pool generation.
//!
//! The pool always starts with every singleton, so the downstream packing
//! problem is feasible even in partition mode. Sampled rollouts from the empty
//! state are added until the budget runs out, deduplicated by member set.

use std::collections::HashSet;
use std::io::Write;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;

use crate::budget::Budget;
use crate::domain::{feasible_count, Collective, Instance};
use crate::error::{Error, Result};
use crate::policy::{check_compatible, Decoder, PolicyParams, Selection, State};
use crate::rng;
use crate::solve::{write_collectives, PackingMode, WspInstance};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub rollouts: u64,
    pub duplicates: u64,
    pub wall_ms: u64,
}

/// Distinct feasible collectives of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    agent_count: usize,
    mode: PackingMode,
    collectives: Vec<Collective>,
    stats: PoolStats,
}

impl CandidatePool {
    pub fn collectives(&self) -> &[Collective] {
        &self.collectives
    }

    pub fn len(&self) -> usize {
        self.collectives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.collectives.is_empty()
    }

    pub fn stats(&self) -> PoolStats {
        self.stats
    }

    /// The packing problem over this pool.
    pub fn to_wsp(&self) -> Result<WspInstance> {
        WspInstance::from_collectives(self.agent_count, &self.collectives, self.mode)
    }

    /// One `{"members": [...], "value": v}` line per collective.
    pub fn write_jsonl<W: Write>(&self, w: W) -> Result<()> {
        write_collectives(w, &self.collectives)
    }
}

fn mode_of(instance: &Instance) -> PackingMode {
    if instance.rules().partition_required {
        PackingMode::Partition
    } else {
        PackingMode::Packing
    }
}

struct Collector {
    seen: HashSet<Vec<usize>>,
    collectives: Vec<Collective>,
    duplicates: u64,
}

impl Collector {
    fn with_singletons(instance: &Instance) -> Result<Collector> {
        let mut c = Collector { seen: HashSet::new(), collectives: Vec::new(), duplicates: 0 };
        for i in 0..instance.len() {
            c.insert(Collective::new(instance, vec![i])?);
        }
        Ok(c)
    }

    fn insert(&mut self, collective: Collective) {
        if self.seen.insert(collective.members().to_vec()) {
            self.collectives.push(collective);
        } else {
            self.duplicates += 1;
        }
    }
}

fn check_budget(budget: Budget) -> Result<()> {
    if budget == Budget::Unlimited {
        return Err(Error::InvalidArgument("pool generation needs a finite budget".into()));
    }
    Ok(())
}

/// Samples rollouts until `budget` (rollouts in count mode) is spent or the
/// pool holds every feasible collective.
pub fn generate_pool(
    params: &PolicyParams,
    instance: &Instance,
    budget: Budget,
    rng: &mut dyn RngCore,
) -> Result<CandidatePool> {
    check_budget(budget)?;
    check_compatible(params, instance)?;
    let start = Instant::now();
    let decoder = Decoder::new(params, instance)?;
    let mut collector = Collector::with_singletons(instance)?;
    let total = feasible_count(instance.len(), instance.rules().max_cardinality);
    let mut meter = budget.meter();
    let empty = State::empty(instance.len());
    while (collector.collectives.len() as u128) < total && meter.try_consume() {
        collector.insert(decoder.rollout(&empty, Selection::Sample(&mut *rng))?.collective);
    }
    Ok(CandidatePool {
        agent_count: instance.len(),
        mode: mode_of(instance),
        collectives: collector.collectives,
        stats: PoolStats {
            rollouts: meter.used(),
            duplicates: collector.duplicates,
            wall_ms: start.elapsed().as_millis() as u64,
        },
    })
}

/// Like [`generate_pool`] with `workers` independent samplers seeded from
/// `seed`. A count budget is split evenly; worker outputs are merged in
/// worker order, so count-mode results do not depend on scheduling.
pub fn generate_pool_parallel(
    params: &PolicyParams,
    instance: &Instance,
    budget: Budget,
    seed: u64,
    workers: usize,
) -> Result<CandidatePool> {
    check_budget(budget)?;
    let workers = workers.max(1);
    if workers == 1 {
        return generate_pool(params, instance, budget, &mut rng::stream(seed, &[0]));
    }
    let start = Instant::now();
    let shares: Vec<Budget> = (0..workers as u64)
        .map(|w| match budget {
            Budget::Count(c) => Budget::Count(c / workers as u64 + u64::from(w < c % workers as u64)),
            other => other,
        })
        .collect();
    let parts = shares
        .into_par_iter()
        .enumerate()
        .map(|(w, b)| generate_pool(params, instance, b, &mut rng::stream(seed, &[w as u64])))
        .collect::<Result<Vec<_>>>()?;
    let mut collector = Collector::with_singletons(instance)?;
    let mut rollouts = 0;
    for part in parts {
        rollouts += part.stats.rollouts;
        collector.duplicates += part.stats.duplicates;
        for c in part.collectives {
            if c.len() > 1 {
                collector.insert(c);
            }
        }
    }
    Ok(CandidatePool {
        agent_count: instance.len(),
        mode: mode_of(instance),
        collectives: collector.collectives,
        stats: PoolStats { rollouts, duplicates: collector.duplicates, wall_ms: start.elapsed().as_millis() as u64 },
    })
}

/// Normalized histogram of collective values and the number of distinct collectives.
#[derive(Clone, Debug, PartialEq)]
pub struct Diversity {
    /// `bins + 1` increasing edges.
    pub edges: Vec<f64>,
    /// Fraction of collectives per bin; sums to 1.
    pub density: Vec<f64>,
    pub distinct: usize,
}

/// Histogram of `values` over `bins` equal bins spanning `[lo, hi]`. Values
/// outside the range are clamped into the end bins. A degenerate range puts
/// everything in the first bin.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let bins = bins.max(1);
    let mut counts = vec![0.0; bins];
    if values.is_empty() {
        return counts;
    }
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 { (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1) } else { 0 };
        counts[b] += 1.0;
    }
    let total = values.len() as f64;
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

pub fn bin_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let bins = bins.max(1);
    (0..=bins).map(|k| if k == bins { hi } else { lo + (hi - lo) * k as f64 / bins as f64 }).collect()
}

/// Value histogram of a pool over its own value range.
pub fn pool_diversity(pool: &CandidatePool, bins: usize) -> Result<Diversity> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("empty pool".into()));
    }
    let values: Vec<f64> = pool.collectives.iter().map(Collective::value).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Diversity { edges: bin_edges(lo, hi, bins), density: histogram(&values, lo, hi, bins), distinct: pool.len() })
}
