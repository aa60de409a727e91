//! Iterative maximizer of the mean-field potential over the simplex.
//!
//! Gradient ascent with the entropic (Kullback-Leibler) projection onto the
//! simplex: `ln x <- ln x + eta * grad phi(x)`, then renormalize. The
//! Euclidean projection is unusable here because the curvature `-gamma/x_i`
//! explodes on sparsely populated levels. Only the potential and its
//! gradient are used; nothing is assumed about the shape of the maximizer.

use crate::error::{domain, Error, Result};
use crate::model::LevelGame;
use crate::potential::mean_field_potential;

use super::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AscentOptions {
    /// Step as a multiple of `1/gamma`; must lie in (0, 1).
    pub step_scale: f64,
    /// Stop once no share moves by more than this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for AscentOptions {
    fn default() -> Self {
        Self {
            step_scale: 0.5,
            tolerance: 1e-15,
            max_iterations: 10_000,
        }
    }
}

/// Maximizer of `sum x_i b_i + gamma H(x)` over the simplex, started from uniform.
/// Returns the shares and the iteration count.
pub fn maximize_potential(game: &LevelGame, opts: &AscentOptions) -> Result<(Vec<f64>, usize)> {
    if !(opts.step_scale > 0.0 && opts.step_scale < 1.0) {
        return domain(format!("step scale must lie in (0, 1), got {}", opts.step_scale));
    }
    let n = game.len();
    let mut log_x = vec![-(n as f64).ln(); n];
    let mut x: Vec<f64> = log_x.iter().map(|l| l.exp()).collect();
    let mut phi = mean_field_potential(game, &x);
    let mut eta = opts.step_scale / game.gamma;
    let mut change = f64::INFINITY;

    for it in 1..=opts.max_iterations {
        let stepped: Vec<f64> = log_x
            .iter()
            .zip(&game.base)
            .map(|(l, b)| l + eta * (b - game.gamma * (l + 1.0)))
            .collect();
        let lse = log_sum_exp(stepped.iter().copied());
        let next_log: Vec<f64> = stepped.iter().map(|l| l - lse).collect();
        let next: Vec<f64> = next_log.iter().map(|l| l.exp()).collect();
        let next_phi = mean_field_potential(game, &next);
        if next_phi < phi - 1e-12 * phi.abs().max(1.0) {
            eta *= 0.5;
            continue;
        }
        change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        log_x = next_log;
        x = next;
        phi = next_phi;
        if change < opts.tolerance {
            return Ok((x, it));
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        residual: change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{boltzmann_equilibrium, lognormal_equilibrium};
    use crate::model::{ClassParams, EnergyGrid, SalaryGrid};

    #[test]
    fn recovers_lognormal() {
        let grid = SalaryGrid::uniform(20.0, 3000.0, 100).unwrap();
        let p = ClassParams::new(215.0, 20.5, 5.0).unwrap();
        let (x, _) = maximize_potential(&LevelGame::pay(&grid, &p), &AscentOptions::default()).unwrap();
        let (closed, _) = lognormal_equilibrium(&grid, &p).unwrap();
        let linf = x.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(linf < 1e-6, "{linf}");
    }

    #[test]
    fn recovers_boltzmann() {
        let g = EnergyGrid::new(vec![0.1, 0.9, 0.4, 0.35, 0.0], 1.0).unwrap();
        let (x, _) = maximize_potential(&LevelGame::thermo(&g), &AscentOptions::default()).unwrap();
        let closed = boltzmann_equilibrium(&g);
        let linf = x.iter().zip(&closed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(linf < 1e-6, "{linf}");
    }

    #[test]
    fn rejects_bad_step() {
        let g = LevelGame::new(vec![0.0, 1.0], 1.0).unwrap();
        let opts = AscentOptions { step_scale: 1.5, ..Default::default() };
        assert!(maximize_potential(&g, &opts).is_err());
    }
}
