//! Game potentials, the entropy term and the free-energy identity.
//!
//! The potential of the pay game is `phi = phi_u + phi_v + phi_f` with
//!
//! ```text
//! phi_u =  alpha * sum_i x_i ln S_i
//! phi_v = -beta  * sum_i x_i (ln S_i)^2
//! phi_f = (gamma / N) * ln( N! / prod_i (N x_i)! )
//! ```
//!
//! and the additive constant fixed to zero.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{ClassParams, EnergyGrid, LevelGame, Occupancy, PopulationState, SalaryGrid};

/// Largest argument served from the exact log-factorial table.
pub const LOG_FACTORIAL_TABLE_MAX: u64 = 1_000_000;

fn log_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(LOG_FACTORIAL_TABLE_MAX as usize + 1);
        // Neumaier-compensated running sum of ln k.
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        table.push(0.0);
        for k in 1..=LOG_FACTORIAL_TABLE_MAX {
            let term = (k as f64).ln();
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
            table.push(sum + comp);
        }
        table
    })
}

/// `ln k!`: exact summation up to [`LOG_FACTORIAL_TABLE_MAX`], log-gamma above.
pub fn ln_factorial(k: u64) -> f64 {
    if k <= LOG_FACTORIAL_TABLE_MAX {
        log_factorial_table()[k as usize]
    } else {
        libm::lgamma(k as f64 + 1.0)
    }
}

/// `ln Gamma(x + 1)`, the continuous extension of `ln x!` for real `x >= 0`.
pub fn ln_factorial_real(x: f64) -> f64 {
    if x.fract() == 0.0 && x <= LOG_FACTORIAL_TABLE_MAX as f64 {
        ln_factorial(x as u64)
    } else {
        libm::lgamma(x + 1.0)
    }
}

/// `ln( N! / prod_i n_i! )` for per-level occupancies `n_i` summing to `N`.
fn ln_multiplicity(state: &PopulationState) -> f64 {
    match state.occupancy() {
        Occupancy::Counts(_) => {
            let occ = state.level_occupancy();
            ln_factorial(state.total() as u64)
                - occ.iter().map(|&n| ln_factorial(n as u64)).sum::<f64>()
        }
        Occupancy::Shares(_) => {
            let occ = state.level_occupancy();
            ln_factorial_real(state.total())
                - occ.iter().map(|&n| ln_factorial_real(n)).sum::<f64>()
        }
    }
}

/// Components of the potential at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialBreakdown {
    pub phi_u: f64,
    pub phi_v: f64,
    pub phi_f: f64,
    pub phi_total: f64,
}

impl PotentialBreakdown {
    fn new(phi_u: f64, phi_v: f64, phi_f: f64) -> Self {
        Self {
            phi_u,
            phi_v,
            phi_f,
            phi_total: phi_u + phi_v + phi_f,
        }
    }
}

fn check_levels(state: &PopulationState, n: usize) -> Result<()> {
    if state.n_levels() != n {
        return domain(format!(
            "state has {} levels but the grid has {n}",
            state.n_levels()
        ));
    }
    Ok(())
}

/// Pay-game potential with every agent using `params`. Classes in `state`
/// are pooled; only the per-level occupancy matters.
pub fn potential(
    state: &PopulationState,
    grid: &SalaryGrid,
    params: &ClassParams,
) -> Result<PotentialBreakdown> {
    check_levels(state, grid.len())?;
    let x = state.level_shares();
    let (mut su, mut sv) = (0.0, 0.0);
    for (xi, s) in x.iter().zip(grid.levels()) {
        let l = s.ln();
        su += xi * l;
        sv += xi * l * l;
    }
    let phi_f = params.gamma / state.total() * ln_multiplicity(state);
    Ok(PotentialBreakdown::new(params.alpha * su, -params.beta * sv, phi_f))
}

/// Thermodynamic-game potential `-(beta_t/N) E + (1/N) ln(N!/prod (N x_i)!)`.
///
/// The energy term is reported in `phi_v` and `phi_u` is zero.
pub fn thermo_potential(state: &PopulationState, grid: &EnergyGrid) -> Result<PotentialBreakdown> {
    check_levels(state, grid.len())?;
    let n = state.total();
    let energy = total_energy(state, grid);
    Ok(PotentialBreakdown::new(
        0.0,
        -grid.beta_t() / n * energy,
        ln_multiplicity(state) / n,
    ))
}

/// `E = N sum_i x_i E_i`.
fn total_energy(state: &PopulationState, grid: &EnergyGrid) -> f64 {
    state
        .level_occupancy()
        .iter()
        .zip(grid.energies())
        .map(|(n, e)| n * e)
        .sum()
}

/// Shannon entropy `-sum x ln x` with `0 ln 0 = 0`.
pub fn entropy_stirling(shares: &[f64]) -> f64 {
    -shares
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

/// Large-N potential `sum_i x_i b_i + gamma * H(x)`, the Lyapunov function of
/// the mean-field dynamics of `game`.
pub fn mean_field_potential(game: &LevelGame, shares: &[f64]) -> f64 {
    let linear: f64 = shares.iter().zip(&game.base).map(|(x, b)| x * b).sum();
    linear + game.gamma * entropy_stirling(shares)
}

/// The potential evaluated directly and through the Helmholtz free energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelmholtzCheck {
    pub phi: f64,
    pub free_energy_form: f64,
    pub abs_difference: f64,
}

/// Compares `phi` with `-(beta_t/N) A`, `A = E - S/beta_t`, `S = ln(N!/prod (N x_i)!)`.
///
/// At `beta_t = 0` the free-energy form is taken in its limit `S/N`.
pub fn helmholtz_check(state: &PopulationState, grid: &EnergyGrid) -> Result<HelmholtzCheck> {
    let phi = thermo_potential(state, grid)?.phi_total;
    let n = state.total();
    let entropy = ln_multiplicity(state);
    let beta = grid.beta_t();
    let free_energy_form = if beta > 0.0 {
        let helmholtz = total_energy(state, grid) - entropy / beta;
        -beta / n * helmholtz
    } else {
        entropy / n
    };
    Ok(HelmholtzCheck {
        phi,
        free_energy_form,
        abs_difference: (phi - free_energy_form).abs(),
    })
}
