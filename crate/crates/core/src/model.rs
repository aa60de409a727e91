//! Domain types and payoff functions for the pay game and the thermodynamic game.
//!
//! Salaries are in kilodollars throughout.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Ordered salary levels, in kilodollars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SalaryGrid {
    levels: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Uniform,
    LogUniform,
}

impl SalaryGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return domain(format!("salary grid needs at least 2 levels, got {}", levels.len()));
        }
        if let Some(bad) = levels.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return domain(format!("salary levels must be finite and positive, got {bad}"));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return domain("salary levels must be strictly increasing");
        }
        Ok(Self { levels })
    }

    /// `n` levels from `min` to `max` inclusive.
    pub fn with_spacing(min: f64, max: f64, n: usize, spacing: Spacing) -> Result<Self> {
        if !(min > 0.0 && max > min && max.is_finite()) {
            return domain(format!("grid bounds must satisfy 0 < min < max, got [{min}, {max}]"));
        }
        if n < 2 {
            return domain(format!("salary grid needs at least 2 levels, got {n}"));
        }
        let last = (n - 1) as f64;
        let levels = match spacing {
            Spacing::Uniform => (0..n)
                .map(|i| min + (max - min) * i as f64 / last)
                .collect(),
            Spacing::LogUniform => {
                let (lo, hi) = (min.ln(), max.ln());
                (0..n).map(|i| (lo + (hi - lo) * i as f64 / last).exp()).collect()
            }
        };
        Self::new(levels)
    }

    pub fn uniform(min: f64, max: f64, n: usize) -> Result<Self> {
        Self::with_spacing(min, max, n, Spacing::Uniform)
    }

    pub fn log_uniform(min: f64, max: f64, n: usize) -> Result<Self> {
        Self::with_spacing(min, max, n, Spacing::LogUniform)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn log_levels(&self) -> Vec<f64> {
        self.levels.iter().map(|s| s.ln()).collect()
    }

    pub fn min(&self) -> f64 {
        self.levels[0]
    }

    pub fn max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }
}

impl TryFrom<Vec<f64>> for SalaryGrid {
    type Error = crate::Error;
    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<SalaryGrid> for Vec<f64> {
    fn from(grid: SalaryGrid) -> Self {
        grid.levels
    }
}

/// Preference weights of one agent class: salary utility `alpha`, effort
/// disutility `beta`, fairness `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ClassParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let p = Self { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return domain(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Occupancy-independent part of the payoff, `alpha ln S - beta (ln S)^2`.
    pub fn base_payoff(&self, salary: f64) -> f64 {
        let l = salary.ln();
        self.alpha * l - self.beta * l * l
    }
}

/// Utility of holding a job at `salary` shared with `occupancy` agents in total.
///
/// An empty level (`occupancy == 0`) returns `f64::INFINITY`, which compares
/// greater than every finite utility.
pub fn payoff(salary: f64, occupancy: u64, params: &ClassParams) -> Result<f64> {
    if !(salary > 0.0) {
        return domain(format!("salary must be > 0, got {salary}"));
    }
    if occupancy == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(params.base_payoff(salary) - params.gamma * (occupancy as f64).ln())
}

/// Effort as a function of salary, `E(S) = ln S`.
pub fn effort(salary: f64) -> f64 {
    salary.ln()
}

/// Elasticity `S/E * dE/dS = 1 / ln S` of the effort function.
pub fn effort_elasticity(salary: f64) -> f64 {
    1.0 / salary.ln()
}

/// Per-state energies with inverse temperature `beta_t = 1/kT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyGrid {
    energies: Vec<f64>,
    beta_t: f64,
}

impl EnergyGrid {
    pub fn new(energies: Vec<f64>, beta_t: f64) -> Result<Self> {
        if energies.is_empty() {
            return domain("energy grid must have at least one state");
        }
        if energies.iter().any(|e| !e.is_finite()) {
            return domain("energies must be finite");
        }
        if !(beta_t.is_finite() && beta_t >= 0.0) {
            return domain(format!("beta_t must be finite and >= 0, got {beta_t}"));
        }
        Ok(Self { energies, beta_t })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn beta_t(&self) -> f64 {
        self.beta_t
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }
}

/// Thermodynamic-game utility `-beta_t E_i - ln N_i`; `+inf` on an empty state.
pub fn thermo_payoff(state_index: usize, occupancy: u64, grid: &EnergyGrid) -> Result<f64> {
    let Some(e) = grid.energies.get(state_index) else {
        return domain(format!(
            "state index {state_index} out of range for {} states",
            grid.len()
        ));
    };
    if occupancy == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(-grid.beta_t * e - (occupancy as f64).ln())
}

/// Single-population game whose payoffs have the shape `h_i = b_i - gamma ln(N x_i)`.
///
/// Both the pay game (`b_i = alpha ln S_i - beta (ln S_i)^2`) and the
/// thermodynamic game (`b_i = -beta_t E_i`, `gamma = 1`) have this shape,
/// which is all the mean-field machinery needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGame {
    pub base: Vec<f64>,
    pub gamma: f64,
}

impl LevelGame {
    pub fn new(base: Vec<f64>, gamma: f64) -> Result<Self> {
        if base.is_empty() || base.iter().any(|b| !b.is_finite()) {
            return domain("base payoffs must be non-empty and finite");
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return domain(format!("gamma must be finite and > 0, got {gamma}"));
        }
        Ok(Self { base, gamma })
    }

    pub fn pay(grid: &SalaryGrid, params: &ClassParams) -> Self {
        Self {
            base: grid.levels().iter().map(|&s| params.base_payoff(s)).collect(),
            gamma: params.gamma,
        }
    }

    pub fn thermo(grid: &EnergyGrid) -> Self {
        Self {
            base: grid.energies().iter().map(|e| -grid.beta_t() * e).collect(),
            gamma: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    /// Mean-field payoffs `b_i - gamma ln x_i`. The `-gamma ln N` shift common to
    /// every level is dropped; it cancels in every payoff comparison.
    pub fn mean_field_payoffs(&self, shares: &[f64]) -> Vec<f64> {
        self.base
            .iter()
            .zip(shares)
            .map(|(b, x)| b - self.gamma * x.ln())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    /// Integer agent counts, indexed `[class][level]`.
    Counts(Vec<Vec<u64>>),
    /// Real-valued shares of the whole population, indexed `[class][level]`.
    Shares(Vec<Vec<f64>>),
}

/// Distribution of agents over (class, level) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    occupancy: Occupancy,
    total: f64,
}

impl PopulationState {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        check_rectangular(counts.iter().map(Vec::len))?;
        let total: u64 = counts.iter().flatten().sum();
        if total == 0 {
            return domain("population must contain at least one agent");
        }
        Ok(Self {
            occupancy: Occupancy::Counts(counts),
            total: total as f64,
        })
    }

    /// Single-class counts.
    pub fn from_level_counts(counts: Vec<u64>) -> Result<Self> {
        Self::from_counts(vec![counts])
    }

    /// Shares over all (class, level) pairs summing to one, for a population of `total` agents.
    pub fn from_shares(shares: Vec<Vec<f64>>, total: f64) -> Result<Self> {
        check_rectangular(shares.iter().map(Vec::len))?;
        if shares.iter().flatten().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return domain("shares must be finite and >= 0");
        }
        let sum: f64 = shares.iter().flatten().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return domain(format!("shares must sum to 1, got {sum}"));
        }
        if !(total.is_finite() && total >= 1.0) {
            return domain(format!("population size must be >= 1, got {total}"));
        }
        Ok(Self {
            occupancy: Occupancy::Shares(shares),
            total,
        })
    }

    pub fn from_level_shares(shares: Vec<f64>, total: f64) -> Result<Self> {
        Self::from_shares(vec![shares], total)
    }

    pub fn occupancy(&self) -> &Occupancy {
        &self.occupancy
    }

    /// Total number of agents `N`.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn n_classes(&self) -> usize {
        match &self.occupancy {
            Occupancy::Counts(c) => c.len(),
            Occupancy::Shares(s) => s.len(),
        }
    }

    pub fn n_levels(&self) -> usize {
        match &self.occupancy {
            Occupancy::Counts(c) => c[0].len(),
            Occupancy::Shares(s) => s[0].len(),
        }
    }

    /// Agents per level summed over classes, `N x_i` (real-valued in share mode).
    pub fn level_occupancy(&self) -> Vec<f64> {
        let mut occ = vec![0.0; self.n_levels()];
        match &self.occupancy {
            Occupancy::Counts(c) => {
                for row in c {
                    for (o, n) in occ.iter_mut().zip(row) {
                        *o += *n as f64;
                    }
                }
            }
            Occupancy::Shares(s) => {
                for row in s {
                    for (o, x) in occ.iter_mut().zip(row) {
                        *o += x * self.total;
                    }
                }
            }
        }
        occ
    }

    /// Combined shares per level, `x_i`.
    pub fn level_shares(&self) -> Vec<f64> {
        self.level_occupancy()
            .into_iter()
            .map(|n| n / self.total)
            .collect()
    }

    /// Agents per class, `N_j`.
    pub fn class_totals(&self) -> Vec<f64> {
        match &self.occupancy {
            Occupancy::Counts(c) => c.iter().map(|r| r.iter().sum::<u64>() as f64).collect(),
            Occupancy::Shares(s) => s
                .iter()
                .map(|r| r.iter().sum::<f64>() * self.total)
                .collect(),
        }
    }
}

fn check_rectangular(mut lens: impl Iterator<Item = usize>) -> Result<()> {
    let Some(first) = lens.next() else {
        return domain("population needs at least one class");
    };
    if first == 0 {
        return domain("population needs at least one level");
    }
    if lens.any(|l| l != first) {
        return domain("every class must cover the same number of levels");
    }
    Ok(())
}

/// How a sampled agent receives job offers in the agent simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfferSampling {
    /// Offer level drawn with probability proportional to its current occupancy.
    #[default]
    Imitative,
    /// Offer level drawn uniformly over all levels.
    Uniform,
}

/// One agent class inside a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassGroup {
    pub params: ClassParams,
    pub count: u64,
}

/// Settings shared by the mean-field integrator and the agent simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsSettings {
    /// Explicit step size of the replicator integrator.
    pub dt: f64,
    /// Convergence threshold on the sup-norm of the replicator velocity.
    pub tolerance: f64,
    /// Step budget of the replicator integrator.
    pub max_steps: usize,
    /// Sweep budget of the agent simulation; a sweep is `N` offers.
    pub epochs_max: usize,
    /// Stationarity window, in sweeps.
    pub window: usize,
    /// Stationarity threshold on the L1 change of the histogram across the window.
    pub threshold: f64,
    pub offer_sampling: OfferSampling,
    /// Per-offer probability that the sampled agent is let go and must take the offer.
    pub firing_hazard: f64,
    /// Number of independent shards; 1 is the single-threaded reference.
    pub shards: usize,
    /// Record a trajectory snapshot every this many sweeps (or steps).
    pub snapshot_cadence: usize,
}

impl Default for DynamicsSettings {
    fn default() -> Self {
        Self {
            dt: 0.1,
            tolerance: 1e-10,
            max_steps: 100_000,
            epochs_max: 2_000,
            window: 100,
            threshold: 1e-3,
            offer_sampling: OfferSampling::Imitative,
            firing_hazard: 0.0,
            shards: 1,
            snapshot_cadence: 10,
        }
    }
}

impl DynamicsSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return domain(format!("dt must be > 0, got {}", self.dt));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return domain(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if self.window == 0 {
            return domain("stationarity window must be >= 1");
        }
        if !(self.threshold.is_finite() && self.threshold >= 0.0) {
            return domain(format!("stationarity threshold must be >= 0, got {}", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.firing_hazard) {
            return domain(format!("firing hazard must lie in [0, 1], got {}", self.firing_hazard));
        }
        if self.shards == 0 {
            return domain("shards must be >= 1");
        }
        if self.snapshot_cadence == 0 {
            return domain("snapshot cadence must be >= 1");
        }
        Ok(())
    }
}

/// A complete market setup: salary levels, agent classes and run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: SalaryGrid,
    pub classes: Vec<ClassGroup>,
    /// Salary budget `M` in kilodollars; reported, never enforced.
    pub budget_kusd: Option<f64>,
    pub seed: u64,
    pub dynamics: DynamicsSettings,
}

impl Scenario {
    pub fn new(grid: SalaryGrid, classes: Vec<ClassGroup>, seed: u64) -> Result<Self> {
        let s = Self {
            grid,
            classes,
            budget_kusd: None,
            seed,
            dynamics: DynamicsSettings::default(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return domain("scenario needs at least one class");
        }
        for (j, c) in self.classes.iter().enumerate() {
            c.params
                .validate()
                .map_err(|e| crate::Error::Domain(format!("class {}: {e}", j + 1)))?;
            if c.count == 0 {
                return domain(format!("class {} must have at least one agent", j + 1));
            }
        }
        if self.classes.len() > u8::MAX as usize {
            return domain("at most 255 classes are supported");
        }
        if self.grid.len() > u16::MAX as usize {
            return domain("at most 65535 levels are supported");
        }
        self.dynamics.validate()
    }

    pub fn total_agents(&self) -> u64 {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn class_params(&self) -> Vec<ClassParams> {
        self.classes.iter().map(|c| c.params).collect()
    }

    pub fn class_weights(&self) -> Vec<f64> {
        let n = self.total_agents() as f64;
        self.classes.iter().map(|c| c.count as f64 / n).collect()
    }
}
