//! Shared fixtures for the benchmarks.

use paydist_core::model::{ClassGroup, ClassParams, SalaryGrid, Scenario};

pub fn class_one() -> ClassParams {
    ClassParams::new(215.0, 20.5, 5.0).expect("valid parameters")
}

pub fn class_two() -> ClassParams {
    ClassParams::new(220.5, 19.45, 10.0).expect("valid parameters")
}

/// 100 uniform levels from 20 to 3000 kilodollars.
pub fn market_grid() -> SalaryGrid {
    SalaryGrid::uniform(20.0, 3000.0, 100).expect("valid grid")
}

/// Two-class market with a 95:5 split of `agents`.
pub fn two_class_scenario(agents: u64, shards: usize, sweeps: usize) -> Scenario {
    let minority = agents / 20;
    let mut s = Scenario::new(
        market_grid(),
        vec![
            ClassGroup { params: class_one(), count: agents - minority },
            ClassGroup { params: class_two(), count: minority },
        ],
        42,
    )
    .expect("valid scenario");
    s.dynamics.shards = shards;
    s.dynamics.epochs_max = sweeps;
    s.dynamics.threshold = 0.0;
    s
}
