//! Deterministic mean dynamics on population shares.
//!
//! A state is a matrix `y[j][i]` of shares over (class, level) pairs summing
//! to one. Class `j` at level `i` earns `b_j(i) - gamma_j ln x_i` where `x_i`
//! is the combined share of level `i`; each class keeps its own total mass.

use serde::{Deserialize, Serialize};

use super::TrajectoryRecord;
use crate::error::{domain, Error, Result};
use crate::model::{DynamicsSettings, LevelGame, Occupancy, PopulationState, Scenario};
use crate::potential::mean_field_potential;

/// Halvings of the step size tried before a step is declared failed.
const MAX_HALVINGS: u32 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    /// `dy_i = y_i (h_i - mean h)`.
    #[default]
    ImitativeReplicator,
    /// Move toward the best level, with the step length chosen to maximize
    /// the potential along the segment. Single-class games only.
    BestResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisionProtocol {
    pub kind: ProtocolKind,
    /// Multiplies the revision rate; rescales time only.
    pub rate_scale: f64,
}

impl Default for RevisionProtocol {
    fn default() -> Self {
        Self {
            kind: ProtocolKind::ImitativeReplicator,
            rate_scale: 1.0,
        }
    }
}

impl RevisionProtocol {
    pub fn new(kind: ProtocolKind, rate_scale: f64) -> Result<Self> {
        let p = Self { kind, rate_scale };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_scale.is_finite() && self.rate_scale > 0.0) {
            return domain(format!("rate scale must be finite and > 0, got {}", self.rate_scale));
        }
        Ok(())
    }
}

/// The per-class level games of a population together with class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanField {
    games: Vec<LevelGame>,
    weights: Vec<f64>,
}

impl MeanField {
    pub fn new(games: Vec<LevelGame>, weights: Vec<f64>) -> Result<Self> {
        if games.is_empty() || games.len() != weights.len() {
            return domain("need one weight per class and at least one class");
        }
        let n = games[0].len();
        if games.iter().any(|g| g.len() != n) {
            return domain("every class must cover the same levels");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return domain("class weights must be > 0");
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { games, weights })
    }

    pub fn single(game: LevelGame) -> Self {
        Self {
            games: vec![game],
            weights: vec![1.0],
        }
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let games = scenario
            .classes
            .iter()
            .map(|c| LevelGame::pay(&scenario.grid, &c.params))
            .collect();
        Self::new(games, scenario.class_weights())
    }

    pub fn n_classes(&self) -> usize {
        self.games.len()
    }

    pub fn n_levels(&self) -> usize {
        self.games[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Every class spread evenly over all levels.
    pub fn uniform_state(&self) -> Vec<Vec<f64>> {
        let n = self.n_levels() as f64;
        self.weights.iter().map(|w| vec![w / n; self.n_levels()]).collect()
    }

    fn level_shares(y: &[Vec<f64>]) -> Vec<f64> {
        let mut x = vec![0.0; y[0].len()];
        for row in y {
            for (xi, v) in x.iter_mut().zip(row) {
                *xi += v;
            }
        }
        x
    }

    /// Payoffs of every class at every level, and each class's mean payoff.
    pub fn payoffs(&self, y: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x = Self::level_shares(y);
        let h: Vec<Vec<f64>> = self.games.iter().map(|g| g.mean_field_payoffs(&x)).collect();
        let mean = h
            .iter()
            .zip(y)
            .zip(&self.weights)
            .map(|((hj, yj), w)| weighted_sum(yj, hj) / w)
            .collect();
        (h, mean)
    }

    /// Replicator velocity `y_ji (h_ji - mean_j)`.
    pub fn velocity(&self, y: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let (h, mean) = self.payoffs(y);
        y.iter()
            .zip(&h)
            .zip(&mean)
            .map(|((yj, hj), m)| {
                yj.iter()
                    .zip(hj)
                    .map(|(v, hi)| if *v > 0.0 { v * (hi - m) } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    pub fn residual(&self, y: &[Vec<f64>]) -> f64 {
        sup_norm(&self.velocity(y))
    }

    /// Potential of a single-class state; `None` with several classes.
    pub fn potential(&self, y: &[Vec<f64>]) -> Option<f64> {
        (self.games.len() == 1).then(|| mean_field_potential(&self.games[0], &y[0]))
    }

    fn check_state(&self, y: &[Vec<f64>]) -> Result<()> {
        if y.len() != self.n_classes() || y.iter().any(|r| r.len() != self.n_levels()) {
            return domain("state shape does not match the game");
        }
        if y.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return domain("state must be interior: every share > 0");
        }
        Ok(())
    }

    /// One explicit Euler step of the replicator equation. The step is halved
    /// until every share stays positive; returns the new state and the step used.
    pub fn replicator_step(&self, y: &[Vec<f64>], dt: f64) -> Result<(Vec<Vec<f64>>, f64)> {
        if !(dt.is_finite() && dt > 0.0) {
            return domain(format!("dt must be > 0, got {dt}"));
        }
        let v = self.velocity(y);
        let mut h = dt;
        for _ in 0..=MAX_HALVINGS {
            let next: Vec<Vec<f64>> = y
                .iter()
                .zip(&v)
                .map(|(yj, vj)| yj.iter().zip(vj).map(|(a, b)| a + h * b).collect())
                .collect();
            let positive = next
                .iter()
                .flatten()
                .zip(y.iter().flatten())
                .all(|(n, o)| *o == 0.0 || *n > 0.0);
            if positive {
                return Ok((self.renormalize(next), h));
            }
            h *= 0.5;
        }
        Err(Error::StepFailure {
            halvings: MAX_HALVINGS,
        })
    }

    fn renormalize(&self, mut y: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        for (yj, w) in y.iter_mut().zip(&self.weights) {
            let s: f64 = yj.iter().sum();
            for v in yj.iter_mut() {
                *v *= w / s;
            }
        }
        y
    }

    /// Best-response step for a single class: move toward the level with the
    /// highest payoff, as far as the potential keeps increasing (at most `t_max`).
    fn best_response_step(&self, y: &[Vec<f64>], t_max: f64) -> Result<Vec<Vec<f64>>> {
        if self.games.len() != 1 {
            return domain("best-response dynamics needs a single class");
        }
        let game = &self.games[0];
        let x = &y[0];
        let h = game.mean_field_payoffs(x);
        let k = (0..h.len()).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
        let d: Vec<f64> = (0..x.len())
            .map(|i| if i == k { 1.0 - x[i] } else { -x[i] })
            .collect();
        // Directional derivative of the potential; decreasing in t.
        let slope = |t: f64| -> f64 {
            d.iter()
                .zip(x)
                .zip(&game.base)
                .map(|((di, xi), b)| di * (b - game.gamma * (xi + t * di).ln()))
                .sum()
        };
        let t = if slope(t_max) >= 0.0 {
            t_max
        } else {
            let (mut lo, mut hi) = (0.0, t_max);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) >= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        let next: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
        Ok(self.renormalize(vec![next]))
    }

    fn record(&self, y: &[Vec<f64>], step: usize, time: f64, snapshot: bool, total: f64) -> TrajectoryRecord {
        let (_, mean) = self.payoffs(y);
        TrajectoryRecord {
            step,
            time,
            potential: self.potential(y),
            mean_payoff: mean,
            residual: self.residual(y),
            state: snapshot.then(|| {
                PopulationState::from_shares(y.to_vec(), total)
                    .expect("integrator keeps shares on the simplex")
            }),
        }
    }
}

fn weighted_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(v: &[Vec<f64>]) -> f64 {
    v.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
}

/// One replicator step of a single-class game on level shares.
pub fn replicator_step(game: &LevelGame, shares: &[f64], dt: f64) -> Result<Vec<f64>> {
    let field = MeanField::single(game.clone());
    let y = vec![shares.to_vec()];
    field.check_state(&y)?;
    let (next, _) = field.replicator_step(&y, dt)?;
    Ok(next.into_iter().next().unwrap())
}

/// Final state and trajectory of a converged integration.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationOutcome {
    pub state: PopulationState,
    pub trajectory: Vec<TrajectoryRecord>,
    pub steps: usize,
    pub residual: f64,
}

impl IntegrationOutcome {
    /// Shares of class `j` over levels.
    pub fn class_shares(&self, j: usize) -> &[f64] {
        match self.state.occupancy() {
            Occupancy::Shares(s) => &s[j],
            Occupancy::Counts(_) => unreachable!("integrator states hold shares"),
        }
    }
}

fn initial_shares(state: &PopulationState) -> Vec<Vec<f64>> {
    match state.occupancy() {
        Occupancy::Shares(s) => s.clone(),
        Occupancy::Counts(c) => c
            .iter()
            .map(|r| r.iter().map(|n| *n as f64 / state.total()).collect())
            .collect(),
    }
}

/// Integrates until the sup-norm of the replicator velocity drops below
/// `tolerance`, recording the potential at every step.
pub fn integrate_to_equilibrium(
    initial: &PopulationState,
    field: &MeanField,
    protocol: &RevisionProtocol,
    tolerance: f64,
    max_steps: usize,
) -> Result<IntegrationOutcome> {
    let settings = DynamicsSettings {
        tolerance,
        max_steps,
        ..DynamicsSettings::default()
    };
    integrate_with(initial, field, protocol, &settings, |_| {})
}

/// As [`integrate_to_equilibrium`] with explicit settings (`dt`, `tolerance`,
/// `max_steps`, `snapshot_cadence`). `observer` sees every record as it is made.
pub fn integrate_with(
    initial: &PopulationState,
    field: &MeanField,
    protocol: &RevisionProtocol,
    settings: &DynamicsSettings,
    mut observer: impl FnMut(&TrajectoryRecord),
) -> Result<IntegrationOutcome> {
    protocol.validate()?;
    settings.validate()?;
    let total = initial.total();
    let mut y = initial_shares(initial);
    field.check_state(&y)?;
    for (yj, w) in y.iter().zip(field.weights()) {
        let s: f64 = yj.iter().sum();
        if (s - w).abs() > 1e-9 {
            return domain(format!("class mass {s} does not match its weight {w}"));
        }
    }
    let cadence = settings.snapshot_cadence;
    let mut trajectory = Vec::new();
    let mut time = 0.0;
    let mut step = 0;
    loop {
        let rec = field.record(&y, step, time, step % cadence == 0, total);
        let residual = rec.residual;
        observer(&rec);
        trajectory.push(rec);
        if residual < settings.tolerance {
            if let Some(last) = trajectory.last_mut() {
                if last.state.is_none() {
                    last.state = Some(PopulationState::from_shares(y.clone(), total)?);
                }
            }
            return Ok(IntegrationOutcome {
                state: PopulationState::from_shares(y, total)?,
                trajectory,
                steps: step,
                residual,
            });
        }
        if step >= settings.max_steps {
            return Err(Error::NonConvergence {
                iterations: step,
                residual,
            });
        }
        let dt = settings.dt * protocol.rate_scale;
        y = match protocol.kind {
            ProtocolKind::ImitativeReplicator => {
                let (next, used) = field.replicator_step(&y, dt)?;
                time += used;
                next
            }
            ProtocolKind::BestResponse => {
                time += dt.min(1.0);
                field.best_response_step(&y, dt.min(1.0))?
            }
        };
        step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{boltzmann_equilibrium, lognormal_equilibrium};
    use crate::model::{ClassParams, EnergyGrid, SalaryGrid};

    fn reference_class_one() -> (SalaryGrid, ClassParams) {
        (
            SalaryGrid::uniform(20.0, 3000.0, 100).unwrap(),
            ClassParams::new(215.0, 20.5, 5.0).unwrap(),
        )
    }

    #[test]
    fn fixed_point_is_stationary() {
        let (grid, p) = reference_class_one();
        let (x, _) = lognormal_equilibrium(&grid, &p).unwrap();
        let game = LevelGame::pay(&grid, &p);
        // Shares far below machine precision are outside the interior domain.
        let x: Vec<f64> = x.iter().map(|v| v.max(1e-300)).collect();
        let next = replicator_step(&game, &x, 0.1).unwrap();
        let diff = x.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-10, "moved by {diff}");
    }

    #[test]
    fn single_level_is_unchanged() {
        let game = LevelGame::new(vec![3.0], 2.0).unwrap();
        assert_eq!(replicator_step(&game, &[1.0], 0.5).unwrap(), vec![1.0]);
    }

    #[test]
    fn better_level_grows() {
        let game = LevelGame::new(vec![1.0, 0.0], 1.0).unwrap();
        let next = replicator_step(&game, &[0.5, 0.5], 0.1).unwrap();
        assert!(next[0] > 0.5);
        assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_boundary_state_and_bad_dt() {
        let game = LevelGame::new(vec![1.0, 0.0], 1.0).unwrap();
        assert!(replicator_step(&game, &[1.0, 0.0], 0.1).is_err());
        assert!(replicator_step(&game, &[0.5, 0.5], 0.0).is_err());
        assert!(RevisionProtocol::new(ProtocolKind::ImitativeReplicator, f64::INFINITY).is_err());
    }

    #[test]
    fn large_gap_forces_halving() {
        let field = MeanField::single(LevelGame::new(vec![0.0, -1e4], 1.0).unwrap());
        let (y, used) = field.replicator_step(&[vec![0.5, 0.5]], 1.0).unwrap();
        assert!(used < 1.0);
        assert!(y[0][1] > 0.0);
    }

    #[test]
    fn thermo_converges_to_boltzmann() {
        let e = EnergyGrid::new(vec![0.1, 0.9, 0.4, 0.75, 0.2], 1.0).unwrap();
        let field = MeanField::single(LevelGame::thermo(&e));
        let start = PopulationState::from_level_shares(vec![0.2; 5], 100.0).unwrap();
        let out = integrate_to_equilibrium(&start, &field, &RevisionProtocol::default(), 1e-12, 100_000)
            .unwrap();
        let target = boltzmann_equilibrium(&e);
        for (a, b) in out.class_shares(0).iter().zip(&target) {
            assert!((a - b).abs() < 1e-10);
        }
        for w in out.trajectory.windows(2) {
            assert!(w[1].potential.unwrap() >= w[0].potential.unwrap() - 1e-12);
        }
        assert!(out.trajectory.last().unwrap().state.is_some());
    }

    #[test]
    fn starting_at_equilibrium_takes_no_steps() {
        let e = EnergyGrid::new(vec![0.0, 1.0, 2.0], 1.0).unwrap();
        let field = MeanField::single(LevelGame::thermo(&e));
        let start = PopulationState::from_level_shares(boltzmann_equilibrium(&e), 1.0).unwrap();
        let out = integrate_to_equilibrium(&start, &field, &RevisionProtocol::default(), 1e-10, 10).unwrap();
        assert_eq!(out.steps, 0);
        assert_eq!(out.trajectory.len(), 1);
    }

    #[test]
    fn exhausted_budget_reports_residual() {
        let e = EnergyGrid::new(vec![0.0, 3.0], 1.0).unwrap();
        let field = MeanField::single(LevelGame::thermo(&e));
        let start = PopulationState::from_level_shares(vec![0.5, 0.5], 1.0).unwrap();
        match integrate_to_equilibrium(&start, &field, &RevisionProtocol::default(), 1e-12, 3) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-12);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn best_response_approaches_boltzmann() {
        let e = EnergyGrid::new(vec![0.1, 0.9, 0.4, 0.75], 1.0).unwrap();
        let field = MeanField::single(LevelGame::thermo(&e));
        let start = PopulationState::from_level_shares(vec![0.25; 4], 1.0).unwrap();
        let protocol = RevisionProtocol::new(ProtocolKind::BestResponse, 10.0).unwrap();
        let settings = DynamicsSettings {
            tolerance: 1e-6,
            max_steps: 200_000,
            ..DynamicsSettings::default()
        };
        let out = integrate_with(&start, &field, &protocol, &settings, |_| {}).unwrap();
        let target = boltzmann_equilibrium(&e);
        for (a, b) in out.class_shares(0).iter().zip(&target) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
        for w in out.trajectory.windows(2) {
            assert!(w[1].potential.unwrap() >= w[0].potential.unwrap() - 1e-12);
        }
    }

    #[test]
    fn two_classes_conserve_mass() {
        let grid = SalaryGrid::uniform(20.0, 3000.0, 30).unwrap();
        let p1 = ClassParams::new(215.0, 20.5, 5.0).unwrap();
        let p2 = ClassParams::new(220.5, 19.45, 10.0).unwrap();
        let field = MeanField::new(
            vec![LevelGame::pay(&grid, &p1), LevelGame::pay(&grid, &p2)],
            vec![0.95, 0.05],
        )
        .unwrap();
        let mut y = field.uniform_state();
        for _ in 0..200 {
            y = field.replicator_step(&y, 0.05).unwrap().0;
        }
        assert!((y[0].iter().sum::<f64>() - 0.95).abs() < 1e-12);
        assert!((y[1].iter().sum::<f64>() - 0.05).abs() < 1e-12);
        assert!(field.potential(&y).is_none());
        let protocol = RevisionProtocol::new(ProtocolKind::BestResponse, 1.0).unwrap();
        let start = PopulationState::from_shares(field.uniform_state(), 100.0).unwrap();
        assert!(integrate_with(&start, &field, &protocol, &DynamicsSettings::default(), |_| {}).is_err());
    }
}
