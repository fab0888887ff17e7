use std::time::Instant;

use super::{AgentMask, PackingMode, Solution, WspInstance};
use crate::error::{Error, Result};

/// Takes sets in order of decreasing weight per member whenever they fit.
///
/// In packing mode sets of negative weight are never taken. In partition mode
/// agents left uncovered are patched with their best singleton set.
pub fn greedy_incumbent(inst: &WspInstance) -> Result<Solution> {
    let start = Instant::now();
    let sets = inst.sets();
    let ratio = |k: usize| sets[k].weight / sets[k].members.len() as f64;
    let mut order: Vec<usize> = (0..sets.len()).collect();
    order.sort_by(|&a, &b| ratio(b).total_cmp(&ratio(a)).then(a.cmp(&b)));

    let mut covered = AgentMask::empty(inst.n);
    let mut chosen = Vec::new();
    for k in order {
        let s = &sets[k];
        if inst.mode == PackingMode::Packing && s.weight < 0.0 {
            continue;
        }
        if !covered.intersects(&s.mask) {
            covered.union_with(&s.mask);
            chosen.push(k);
        }
    }
    if inst.mode == PackingMode::Partition {
        while let Some(a) = covered.first_missing(inst.n) {
            let best = (0..sets.len())
                .filter(|&k| sets[k].members == [a])
                .max_by(|&x, &y| sets[x].weight.total_cmp(&sets[y].weight).then(y.cmp(&x)))
                .ok_or_else(|| Error::Infeasible(format!("greedy cannot cover agent {a}")))?;
            covered.insert(a);
            chosen.push(best);
        }
    }
    inst.packing(&chosen, false, 0, start.elapsed().as_millis() as u64)
}
