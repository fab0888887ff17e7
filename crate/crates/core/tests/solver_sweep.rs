use std::time::{Duration, Instant};

mod common;

use common::random_wsp;
use coform::solve::{solve_bnb, solve_bruteforce, totals_match, PackingMode};
use coform::Budget;

#[test]
fn branch_and_bound_agrees_with_oracle_on_500_instances() {
    let start = Instant::now();
    for seed in 0..500u64 {
        let mode = if seed % 2 == 0 { PackingMode::Packing } else { PackingMode::Partition };
        let inst = random_wsp(seed, mode);
        let exact = solve_bruteforce(&inst, 22).unwrap().packing;
        let found = solve_bnb(&inst, Budget::Unlimited).unwrap().packing;
        found.check(inst.agent_count(), mode).unwrap();
        assert!(found.proven_optimal);
        assert!(totals_match(found.total, exact.total), "seed {seed}: {} vs {}", found.total, exact.total);
    }
    assert!(start.elapsed() < Duration::from_secs(60));
}
