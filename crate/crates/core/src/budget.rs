use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// How long an anytime procedure may run.
///
/// `Count` is interpreted by each consumer: sampled rollouts for pool
/// generation, node expansions for the packing solver, iterations for MCTS.
/// Count budgets make runs reproducible; wall budgets are for production use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Unlimited,
    Count(u64),
    Wall(Duration),
}

impl Budget {
    pub fn seconds(secs: f64) -> Budget {
        Budget::Wall(Duration::from_secs_f64(secs.max(0.0)))
    }

    pub(crate) fn meter(self) -> Meter {
        Meter { budget: self, start: Instant::now(), used: 0 }
    }
}

/// Tracks consumption of a [`Budget`].
#[derive(Debug)]
pub(crate) struct Meter {
    budget: Budget,
    start: Instant,
    used: u64,
}

impl Meter {
    /// Returns false once the budget is spent; otherwise records one unit.
    pub fn try_consume(&mut self) -> bool {
        let ok = match self.budget {
            Budget::Unlimited => true,
            Budget::Count(limit) => self.used < limit,
            Budget::Wall(limit) => self.start.elapsed() < limit,
        };
        if ok {
            self.used += 1;
        }
        ok
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}
