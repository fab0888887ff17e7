use super::{greedy_incumbent, AgentMask, PackingMode, Solution, WspInstance};
use crate::budget::{Budget, Meter};
use crate::error::{Error, Result};

/// Depth-first branch and bound.
///
/// Branches on the lowest uncovered agent: each fitting set that contains it,
/// in order of decreasing weight, then (packing mode) leaving it uncovered.
/// The optimistic bound of a node is the sum, over uncovered agents, of the
/// best weight share `w(S)/|S|` the agent can receive, floored at zero in
/// packing mode. Each expanded node consumes one unit of `budget`; when the
/// budget runs out the incumbent is returned with `proven_optimal = false`.
pub fn solve_bnb(inst: &WspInstance, budget: Budget) -> Result<Solution> {
    inst.check_coverable()?;
    let n = inst.n;
    let sets = inst.sets();
    let mut containing = vec![Vec::new(); n];
    for (k, s) in sets.iter().enumerate() {
        for &i in &s.members {
            containing[i].push(k);
        }
    }
    for list in &mut containing {
        list.sort_by(|&a, &b| sets[b].weight.total_cmp(&sets[a].weight).then(a.cmp(&b)));
    }
    let share: Vec<f64> = containing
        .iter()
        .map(|list| {
            let best = list.iter().map(|&k| sets[k].weight / sets[k].members.len() as f64).fold(f64::NEG_INFINITY, f64::max);
            match inst.mode {
                PackingMode::Packing => best.max(0.0),
                PackingMode::Partition => best,
            }
        })
        .collect();
    let set_share: Vec<f64> = sets.iter().map(|s| s.members.iter().map(|&i| share[i]).sum()).collect();

    let (best_total, best) = match greedy_incumbent(inst) {
        Ok(sol) => (sol.packing.total, Some(sol.chosen)),
        Err(Error::Infeasible(_)) => (f64::NEG_INFINITY, None),
        Err(e) => return Err(e),
    };
    let mut search = Search {
        inst,
        containing,
        share,
        set_share,
        meter: budget.meter(),
        covered: AgentMask::empty(n),
        stack: Vec::new(),
        best_total,
        best,
        exhausted: false,
    };
    let bound: f64 = search.share.iter().sum();
    search.dfs(0.0, bound);

    let proven = !search.exhausted;
    let nodes = search.meter.used();
    let wall_ms = search.meter.elapsed_ms();
    match search.best {
        Some(chosen) => inst.packing(&chosen, proven, nodes, wall_ms),
        None if proven => Err(Error::Infeasible("no partition of the agents exists".into())),
        None => Err(Error::Infeasible("no partition found within the budget".into())),
    }
}

struct Search<'a> {
    inst: &'a WspInstance,
    containing: Vec<Vec<usize>>,
    share: Vec<f64>,
    set_share: Vec<f64>,
    meter: Meter,
    covered: AgentMask,
    stack: Vec<usize>,
    best_total: f64,
    best: Option<Vec<usize>>,
    exhausted: bool,
}

impl Search<'_> {
    fn dfs(&mut self, current: f64, bound: f64) {
        if self.exhausted {
            return;
        }
        let Some(a) = self.covered.first_missing(self.inst.n) else {
            if self.best.is_none() || current > self.best_total {
                self.best_total = current;
                self.best = Some(self.stack.clone());
            }
            return;
        };
        if self.best.is_some() {
            let slack = 1e-12 * self.best_total.abs().max(1.0);
            if current + bound + slack <= self.best_total {
                return;
            }
        }
        if !self.meter.try_consume() {
            self.exhausted = true;
            return;
        }
        for idx in 0..self.containing[a].len() {
            let k = self.containing[a][idx];
            let set = &self.inst.sets[k];
            if set.mask.intersects(&self.covered) {
                continue;
            }
            let (mask, weight) = (set.mask.clone(), set.weight);
            self.covered.union_with(&mask);
            self.stack.push(k);
            self.dfs(current + weight, bound - self.set_share[k]);
            self.stack.pop();
            self.covered.difference_with(&mask);
            if self.exhausted {
                return;
            }
        }
        if self.inst.mode == PackingMode::Packing {
            self.covered.insert(a);
            self.dfs(current, bound - self.share[a]);
            self.covered.remove(a);
        }
    }
}
