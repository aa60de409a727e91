//! Stochastic agent simulation of the job-switching game.
//!
//! Each offer goes to an agent drawn uniformly at random. The offered level is
//! drawn in proportion to current occupancy (or uniformly, if configured). The
//! agent moves iff its payoff at the offered level, counted with itself there,
//! beats its current payoff. An offer at an empty level is always taken.
//! Everything else (no offer, equal or worse offer) means staying put.
//!
//! A sweep is as many offers as there are agents. With more than one shard the
//! population is dealt round-robin into independent sub-markets that each run
//! a sweep per global sweep on their own random stream; since every payoff
//! comparison is within one shard, the `ln K` occupancy shift cancels.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TrajectoryRecord;
use crate::error::{domain, Result};
use crate::model::{DynamicsSettings, OfferSampling, PopulationState, Scenario};
use crate::potential::ln_factorial;

/// Identifier of the random number generator, recorded with every run.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng";

/// Agent classes with their per-level base payoffs, congestion weights and sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMarket {
    base: Vec<Vec<f64>>,
    gamma: Vec<f64>,
    counts: Vec<u64>,
}

impl AgentMarket {
    pub fn new(base: Vec<Vec<f64>>, gamma: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if base.is_empty() || base.len() != gamma.len() || base.len() != counts.len() {
            return domain("need base payoffs, gamma and a count for every class");
        }
        if base.len() > u8::MAX as usize {
            return domain("at most 255 classes are supported");
        }
        let n = base[0].len();
        if n == 0 || n > u16::MAX as usize || base.iter().any(|b| b.len() != n) {
            return domain("every class needs the same 1..=65535 levels");
        }
        if base.iter().flatten().any(|b| !b.is_finite()) {
            return domain("base payoffs must be finite");
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return domain("gamma must be > 0");
        }
        let total: u64 = counts.iter().sum();
        if counts.contains(&0) || total > u32::MAX as u64 {
            return domain("every class needs at least one agent and at most 2^32 - 1 agents in total");
        }
        Ok(Self { base, gamma, counts })
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let base = scenario
            .classes
            .iter()
            .map(|c| scenario.grid.levels().iter().map(|&s| c.params.base_payoff(s)).collect())
            .collect();
        let gamma = scenario.classes.iter().map(|c| c.params.gamma).collect();
        let counts = scenario.classes.iter().map(|c| c.count).collect();
        Self::new(base, gamma, counts)
    }

    pub fn n_classes(&self) -> usize {
        self.base.len()
    }

    pub fn n_levels(&self) -> usize {
        self.base[0].len()
    }

    pub fn total_agents(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Agents enumerated class by class, the `k`-th placed at level `k mod n`.
    fn initial_agents(&self) -> impl Iterator<Item = (u8, u16)> + '_ {
        let n = self.n_levels();
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(j, &c)| std::iter::repeat_n(j as u8, c as usize))
            .enumerate()
            .map(move |(k, j)| (j, (k % n) as u16))
    }

    /// Counts of the initial allocation, `[class][level]`.
    pub fn initial_counts(&self) -> Vec<Vec<u64>> {
        let mut c = vec![vec![0u64; self.n_levels()]; self.n_classes()];
        for (j, i) in self.initial_agents() {
            c[j as usize][i as usize] += 1;
        }
        c
    }

    /// `(1/N) sum_i n_i b(i) + (gamma/N) ln(N!/prod n_i!)` for a single class.
    fn potential(&self, counts: &[Vec<u64>]) -> Option<f64> {
        if self.n_classes() != 1 {
            return None;
        }
        let n = self.total_agents();
        let mut linear = 0.0;
        let mut ln_mult = ln_factorial(n);
        for (c, b) in counts[0].iter().zip(&self.base[0]) {
            linear += *c as f64 * b;
            ln_mult -= ln_factorial(*c);
        }
        Some((linear + self.gamma[0] * ln_mult) / n as f64)
    }

    /// Mean payoff of each class at the given counts.
    fn mean_payoffs(&self, counts: &[Vec<u64>]) -> Vec<f64> {
        let occ = level_totals(counts);
        counts
            .iter()
            .enumerate()
            .map(|(j, row)| {
                let s: f64 = row
                    .iter()
                    .zip(&occ)
                    .enumerate()
                    .filter(|(_, (c, _))| **c > 0)
                    .map(|(i, (c, o))| *c as f64 * (self.base[j][i] - self.gamma[j] * (*o as f64).ln()))
                    .sum();
                s / self.counts[j] as f64
            })
            .collect()
    }
}

/// Result of an agent run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    /// Final counts.
    pub state: PopulationState,
    pub initial: PopulationState,
    pub trajectory: Vec<TrajectoryRecord>,
    pub sweeps: usize,
    /// Whether the stationarity test passed before the sweep budget ran out.
    pub stationary: bool,
    /// L1 change of the level histogram over the last stationarity window
    /// (or since the start, if fewer sweeps were run).
    pub residual: f64,
    pub offers: u64,
    pub moves: u64,
}

struct Shard {
    class: Vec<u8>,
    level: Vec<u16>,
    occ: Vec<u32>,
    class_occ: Vec<Vec<u64>>,
    rng: ChaCha8Rng,
}

impl Shard {
    fn new(agents: Vec<(u8, u16)>, n_classes: usize, n_levels: usize, rng: ChaCha8Rng) -> Self {
        let mut occ = vec![0u32; n_levels];
        let mut class_occ = vec![vec![0u64; n_levels]; n_classes];
        for &(j, i) in &agents {
            occ[i as usize] += 1;
            class_occ[j as usize][i as usize] += 1;
        }
        let (class, level) = agents.into_iter().unzip();
        Self {
            class,
            level,
            occ,
            class_occ,
            rng,
        }
    }

    /// One sweep; returns the number of moves.
    fn sweep(&mut self, market: &AgentMarket, ln: &[f64], sampling: OfferSampling, hazard: f64) -> u64 {
        let m = self.class.len() as u32;
        if m == 0 {
            return 0;
        }
        let n_levels = market.n_levels() as u16;
        let mut moves = 0;
        for _ in 0..m {
            let a = self.rng.random_range(0..m) as usize;
            let target = match sampling {
                OfferSampling::Imitative => self.level[self.rng.random_range(0..m) as usize],
                OfferSampling::Uniform => self.rng.random_range(0..n_levels),
            };
            let fired = hazard > 0.0 && self.rng.random::<f64>() < hazard;
            let here = self.level[a];
            if target == here {
                continue;
            }
            let (i, t) = (here as usize, target as usize);
            let j = self.class[a] as usize;
            let accept = fired || self.occ[t] == 0 || {
                let (b, g) = (&market.base[j], market.gamma[j]);
                b[t] - g * ln[self.occ[t] as usize + 1] > b[i] - g * ln[self.occ[i] as usize]
            };
            if accept {
                self.occ[i] -= 1;
                self.occ[t] += 1;
                self.class_occ[j][i] -= 1;
                self.class_occ[j][t] += 1;
                self.level[a] = target;
                moves += 1;
            }
        }
        moves
    }
}

fn level_totals(counts: &[Vec<u64>]) -> Vec<u64> {
    let mut occ = vec![0u64; counts[0].len()];
    for row in counts {
        for (o, c) in occ.iter_mut().zip(row) {
            *o += c;
        }
    }
    occ
}

fn normalized(occ: &[u64]) -> Vec<f64> {
    let n: u64 = occ.iter().sum();
    occ.iter().map(|c| *c as f64 / n as f64).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn merged(shards: &[Shard]) -> Vec<Vec<u64>> {
    let mut counts = shards[0].class_occ.clone();
    for s in &shards[1..] {
        for (row, other) in counts.iter_mut().zip(&s.class_occ) {
            for (c, o) in row.iter_mut().zip(other) {
                *c += o;
            }
        }
    }
    counts
}

/// Runs the scenario's agent simulation.
pub fn agent_simulation(scenario: &Scenario) -> Result<SimulationOutcome> {
    agent_simulation_with(scenario, |_| {})
}

/// As [`agent_simulation`], handing every trajectory record to `observer` as it is made.
pub fn agent_simulation_with(
    scenario: &Scenario,
    observer: impl FnMut(&TrajectoryRecord),
) -> Result<SimulationOutcome> {
    scenario.validate()?;
    AgentMarket::from_scenario(scenario)?.simulate(&scenario.dynamics, scenario.seed, observer)
}

impl AgentMarket {
    /// Runs the simulation from the round-robin initial allocation.
    ///
    /// Agents are ordered by (level, class) and dealt round-robin into `K`
    /// shards; shard `s` draws from stream `s + 1` of the seeded generator; the unsharded run
    /// uses stream 0. Records are taken every `snapshot_cadence` sweeps and
    /// after the last sweep.
    pub fn simulate(
        &self,
        settings: &DynamicsSettings,
        seed: u64,
        mut observer: impl FnMut(&TrajectoryRecord),
    ) -> Result<SimulationOutcome> {
        settings.validate()?;
        let k = settings.shards;
        let (nc, nl) = (self.n_classes(), self.n_levels());
        // Dealing in level order gives every shard a slice of every level;
        // imitative offers never reach a level a shard starts without.
        let mut agents: Vec<(u8, u16)> = self.initial_agents().collect();
        agents.sort_by_key(|&(j, i)| (i, j));
        let mut dealt: Vec<Vec<(u8, u16)>> = vec![Vec::with_capacity(agents.len() / k + 1); k];
        for (idx, agent) in agents.into_iter().enumerate() {
            dealt[idx % k].push(agent);
        }
        let mut shards: Vec<Shard> = dealt
            .into_iter()
            .enumerate()
            .map(|(s, agents)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(if k == 1 { 0 } else { s as u64 + 1 });
                Shard::new(agents, nc, nl, rng)
            })
            .collect();
        let largest = shards.iter().map(|s| s.class.len()).max().unwrap_or(0);
        let ln: Vec<f64> = (0..=largest + 1).map(|n| (n as f64).ln()).collect();

        let initial_counts = merged(&shards);
        let initial = PopulationState::from_counts(initial_counts.clone())?;
        let mut history: VecDeque<Vec<f64>> = VecDeque::with_capacity(settings.window + 1);
        history.push_back(normalized(&level_totals(&initial_counts)));

        let record = |sweep: usize, counts: &[Vec<u64>], residual: f64| -> Result<TrajectoryRecord> {
            Ok(TrajectoryRecord {
                step: sweep,
                time: sweep as f64,
                potential: self.potential(counts),
                mean_payoff: self.mean_payoffs(counts),
                residual,
                state: Some(PopulationState::from_counts(counts.to_vec())?),
            })
        };

        let mut trajectory = Vec::new();
        let first = record(0, &initial_counts, f64::INFINITY)?;
        observer(&first);
        trajectory.push(first);

        let mut moves = 0u64;
        let mut residual = f64::INFINITY;
        let mut stationary = false;
        let mut sweeps = 0;
        let mut counts = initial_counts;
        while sweeps < settings.epochs_max {
            moves += if k == 1 {
                shards[0].sweep(self, &ln, settings.offer_sampling, settings.firing_hazard)
            } else {
                shards
                    .par_iter_mut()
                    .map(|s| s.sweep(self, &ln, settings.offer_sampling, settings.firing_hazard))
                    .collect::<Vec<_>>()
                    .into_iter()
                    .sum()
            };
            sweeps += 1;
            counts = merged(&shards);
            let hist = normalized(&level_totals(&counts));
            residual = l1(&hist, &history[0]);
            if history.len() > settings.window {
                history.pop_front();
            }
            history.push_back(hist);
            stationary = sweeps >= settings.window && residual < settings.threshold;
            if stationary || sweeps == settings.epochs_max || sweeps % settings.snapshot_cadence == 0 {
                let rec = record(sweeps, &counts, residual)?;
                observer(&rec);
                trajectory.push(rec);
            }
            if stationary {
                break;
            }
        }

        Ok(SimulationOutcome {
            state: PopulationState::from_counts(counts)?,
            initial,
            trajectory,
            sweeps,
            stationary,
            residual,
            offers: sweeps as u64 * self.total_agents(),
            moves,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ClassGroup, ClassParams, Occupancy, SalaryGrid};

    fn counts_of(state: &PopulationState) -> &Vec<Vec<u64>> {
        match state.occupancy() {
            Occupancy::Counts(c) => c,
            Occupancy::Shares(_) => panic!("agent states hold counts"),
        }
    }

    #[test]
    fn round_robin_allocation() {
        let m = AgentMarket::new(vec![vec![0.0; 3], vec![0.0; 3]], vec![1.0, 1.0], vec![4, 2]).unwrap();
        assert_eq!(m.initial_counts(), vec![vec![2, 1, 1], vec![0, 1, 1]]);
    }

    #[test]
    fn lone_agent_stays() {
        let m = AgentMarket::new(vec![vec![1.0, 1.0]], vec![1.0], vec![1]).unwrap();
        let out = m.simulate(&DynamicsSettings { epochs_max: 50, ..Default::default() }, 7, |_| {}).unwrap();
        assert_eq!(out.moves, 0);
        assert_eq!(counts_of(&out.state), &vec![vec![1, 0]]);
    }

    #[test]
    fn parity_is_never_left() {
        // Two agents start one per level; under uniform offers every offer
        // elsewhere would double up the occupancy and is refused.
        let m = AgentMarket::new(vec![vec![1.0, 1.0]], vec![1.0], vec![2]).unwrap();
        let mut settings = DynamicsSettings {
            epochs_max: 200,
            offer_sampling: OfferSampling::Uniform,
            window: 10,
            ..Default::default()
        };
        settings.threshold = 0.0;
        let mut seen = 0;
        let out = m
            .simulate(&settings, 3, |r| {
                seen += 1;
                assert_eq!(r.state.as_ref().unwrap().level_occupancy(), vec![1.0, 1.0]);
            })
            .unwrap();
        assert!(seen > 1);
        assert_eq!(out.sweeps, 200);
        assert_eq!(out.moves, 0);
        assert_eq!(counts_of(&out.state), &vec![vec![1, 1]]);
    }

    fn small_scenario(seed: u64, shards: usize) -> Scenario {
        let grid = SalaryGrid::uniform(20.0, 3000.0, 40).unwrap();
        let mut s = Scenario::new(
            grid,
            vec![
                ClassGroup { params: ClassParams::new(215.0, 20.5, 5.0).unwrap(), count: 9_500 },
                ClassGroup { params: ClassParams::new(220.5, 19.45, 10.0).unwrap(), count: 500 },
            ],
            seed,
        )
        .unwrap();
        s.dynamics.epochs_max = 300;
        s.dynamics.window = 20;
        s.dynamics.shards = shards;
        s
    }

    #[test]
    fn conserves_classes_and_is_deterministic() {
        for shards in [1, 3] {
            let s = small_scenario(11, shards);
            let mut totals = Vec::new();
            let a = agent_simulation_with(&s, |r| {
                totals.push(r.state.as_ref().unwrap().class_totals());
            })
            .unwrap();
            assert!(totals.iter().all(|t| t == &vec![9_500.0, 500.0]));
            let b = agent_simulation(&s).unwrap();
            assert_eq!(a, b);
            assert!(a.stationary, "{shards} shards: residual {}", a.residual);
        }
        let c = agent_simulation(&small_scenario(12, 1)).unwrap();
        let d = agent_simulation(&small_scenario(11, 1)).unwrap();
        assert_ne!(c.trajectory, d.trajectory);
    }

    #[test]
    fn zero_sweeps_keep_initial_allocation() {
        let mut s = small_scenario(5, 1);
        s.dynamics.epochs_max = 0;
        let out = agent_simulation(&s).unwrap();
        assert_eq!(out.state, out.initial);
        assert_eq!(out.sweeps, 0);
        assert!(!out.stationary);
    }

    #[test]
    fn single_class_potential_never_drops_without_noise() {
        // Every accepted move strictly raises the mover's payoff, which is
        // exactly the change in N times the potential.
        let grid = SalaryGrid::uniform(20.0, 3000.0, 50).unwrap();
        let mut s = Scenario::new(
            grid,
            vec![ClassGroup { params: ClassParams::new(215.0, 20.5, 5.0).unwrap(), count: 5_000 }],
            1,
        )
        .unwrap();
        s.dynamics.epochs_max = 60;
        s.dynamics.snapshot_cadence = 1;
        let out = agent_simulation(&s).unwrap();
        for w in out.trajectory.windows(2) {
            assert!(w[1].potential.unwrap() >= w[0].potential.unwrap() - 1e-9);
        }
    }
}
