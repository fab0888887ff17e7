use std::time::Instant;

use super::{PackingMode, Solution, WspInstance};
use crate::error::{Error, Result};

/// Default cap on the agent count for [`solve_bruteforce`] (`2^n` table entries).
pub const DEFAULT_BRUTEFORCE_AGENTS: usize = 22;

const NONE: u32 = u32::MAX;
const SKIP: u32 = u32::MAX - 1;

/// Exact optimum by dynamic programming over subsets of agents.
///
/// `best(M)` is the best packing that uses only agents in `M`; the lowest
/// agent of `M` is either left out (packing mode only) or covered by one of
/// its sets. Among equal totals the first option in that order wins, sets in
/// ascending index order.
pub fn solve_bruteforce(inst: &WspInstance, max_agents: usize) -> Result<Solution> {
    let start = Instant::now();
    let n = inst.n;
    let limit = max_agents.min(30);
    if n > limit {
        return Err(Error::EnumerationTooLarge { count: 1u128 << n.min(127), limit: 1u128 << limit });
    }
    inst.check_coverable()?;
    let mut by_lowest: Vec<Vec<(u32, f64, u32)>> = vec![Vec::new(); n];
    for (k, s) in inst.sets.iter().enumerate() {
        let mask = s.members.iter().fold(0u32, |m, &i| m | 1 << i);
        by_lowest[s.members[0]].push((mask, s.weight, k as u32));
    }
    // within M the lowest agent a can only be covered by sets whose lowest member is a
    let size = 1usize << n;
    let mut best = vec![f64::NEG_INFINITY; size];
    let mut choice = vec![NONE; size];
    best[0] = 0.0;
    for m in 1..size {
        let a = (m as u32).trailing_zeros() as usize;
        let m32 = m as u32;
        let (mut b, mut c) = match inst.mode {
            PackingMode::Packing => (best[m & !(1 << a)], SKIP),
            PackingMode::Partition => (f64::NEG_INFINITY, NONE),
        };
        for &(sm, w, k) in &by_lowest[a] {
            if sm & !m32 == 0 {
                let v = w + best[(m32 ^ sm) as usize];
                if v > b {
                    b = v;
                    c = k;
                }
            }
        }
        best[m] = b;
        choice[m] = c;
    }
    let mut m = size - 1;
    let mut chosen = Vec::new();
    while m != 0 {
        let a = m.trailing_zeros() as usize;
        match choice[m] {
            NONE => return Err(Error::Infeasible("no partition of the agents exists".into())),
            SKIP => m &= !(1 << a),
            k => {
                chosen.push(k as usize);
                m &= !inst.sets[k as usize].members.iter().fold(0usize, |acc, &i| acc | 1 << i);
            }
        }
    }
    inst.packing(&chosen, true, size as u64, start.elapsed().as_millis() as u64)
}
