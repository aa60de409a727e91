//! Equilibrium densities in closed form and by iteration.
//!
//! The single-class equilibrium of the pay game is the discrete lognormal
//!
//! ```text
//! x_i = 1/(S_i Z) * exp(-(ln S_i - mu)^2 / (2 sigma^2)),
//! mu = (alpha + gamma) / (2 beta),   sigma^2 = gamma / (2 beta),
//! ```
//!
//! normalized by summation over the grid. Heterogeneous populations are
//! handled by [`partitioned_equilibrium`], which splits the levels between
//! classes.

mod ascent;
mod partition;

pub use ascent::{maximize_potential, AscentOptions};
pub use partition::{
    bipop_equilibrium, interface_jumps, partitioned_equilibrium, InterfaceJump, PartitionOptions,
};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::model::{ClassParams, EnergyGrid, SalaryGrid};

/// `ln sum_i exp(v_i)` without overflow.
pub(crate) fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights into a probability vector.
pub(crate) fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights.iter().copied());
    log_weights.iter().map(|w| (w - lse).exp()).collect()
}

/// Gibbs-Boltzmann occupation `exp(-beta_t E_i) / sum_j exp(-beta_t E_j)`.
pub fn boltzmann_equilibrium(grid: &EnergyGrid) -> Vec<f64> {
    let lw: Vec<f64> = grid.energies().iter().map(|e| -grid.beta_t() * e).collect();
    softmax(&lw)
}

/// Location and scale of a lognormal in log-kilodollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LognormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return domain(format!("mu must be finite, got {mu}"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return domain(format!("sigma must be finite and > 0, got {sigma}"));
        }
        Ok(Self { mu, sigma })
    }

    /// `ln[(1/S) exp(-(ln S - mu)^2 / 2 sigma^2)]`, the unnormalized log-weight of a level.
    pub fn log_weight(&self, salary: f64) -> f64 {
        let l = salary.ln();
        let z = (l - self.mu) / self.sigma;
        -l - 0.5 * z * z
    }

    /// Salary maximizing the weight, `exp(mu - sigma^2)`.
    pub fn mode(&self) -> f64 {
        (self.mu - self.sigma * self.sigma).exp()
    }

    /// Discrete lognormal over the grid, normalized by summation.
    pub fn densities(&self, grid: &SalaryGrid) -> Vec<f64> {
        let lw: Vec<f64> = grid.levels().iter().map(|&s| self.log_weight(s)).collect();
        softmax(&lw)
    }
}

/// `mu = (alpha + gamma) / 2 beta`, `sigma = sqrt(gamma / 2 beta)`.
pub fn params_to_lognormal(params: &ClassParams) -> Result<LognormalParams> {
    params.validate()?;
    LognormalParams::new(
        (params.alpha + params.gamma) / (2.0 * params.beta),
        (params.gamma / (2.0 * params.beta)).sqrt(),
    )
}

/// Inverse of [`params_to_lognormal`] at a fixed `gamma`:
/// `beta = gamma / 2 sigma^2`, `alpha = 2 beta mu - gamma`.
///
/// `alpha` comes out non-positive when `mu <= sigma^2`, which is reported as
/// a domain error.
pub fn lognormal_to_params(lognormal: &LognormalParams, gamma: f64) -> Result<ClassParams> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return domain(format!("gamma must be finite and > 0, got {gamma}"));
    }
    if !(lognormal.sigma.is_finite() && lognormal.sigma > 0.0) {
        return domain(format!("sigma must be > 0, got {}", lognormal.sigma));
    }
    let beta = gamma / (2.0 * lognormal.sigma * lognormal.sigma);
    let alpha = 2.0 * beta * lognormal.mu - gamma;
    ClassParams::new(alpha, beta, gamma)
}

/// Single-class equilibrium densities over the grid and their lognormal parameters.
pub fn lognormal_equilibrium(
    grid: &SalaryGrid,
    params: &ClassParams,
) -> Result<(Vec<f64>, LognormalParams)> {
    let ln = params_to_lognormal(params)?;
    Ok((ln.densities(grid), ln))
}

/// Spread estimate from budget and minimum pay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevSigma {
    pub sigma: f64,
    /// Chebyshev lower bound `1 - 1/a^2` on the probability within `a` sigmas.
    pub confidence: f64,
}

/// `sigma = (ln M - ln S_min) / 2a`.
pub fn chebyshev_sigma(budget: f64, s_min: f64, a: f64) -> Result<ChebyshevSigma> {
    if !(s_min > 0.0 && budget > s_min && budget.is_finite()) {
        return domain(format!(
            "need budget > minimum salary > 0, got M = {budget}, S_min = {s_min}"
        ));
    }
    if !(a.is_finite() && a > 0.0) {
        return domain(format!("a must be > 0, got {a}"));
    }
    Ok(ChebyshevSigma {
        sigma: (budget.ln() - s_min.ln()) / (2.0 * a),
        confidence: (1.0 - 1.0 / (a * a)).max(0.0),
    })
}

/// Mixture of per-class discrete lognormals weighted by class size.
///
/// Classes with zero agents contribute nothing; at least one class must be non-empty.
pub fn mixture_approx(grid: &SalaryGrid, classes: &[(ClassParams, u64)]) -> Result<Vec<f64>> {
    Ok(mixture_components(grid, classes)?
        .into_iter()
        .fold(vec![0.0; grid.len()], |mut acc, comp| {
            acc.iter_mut().zip(comp).for_each(|(a, c)| *a += c);
            acc
        }))
}

/// Per-class terms `(N_j/N) * lognormal_j` of [`mixture_approx`].
pub fn mixture_components(
    grid: &SalaryGrid,
    classes: &[(ClassParams, u64)],
) -> Result<Vec<Vec<f64>>> {
    let total: u64 = classes.iter().map(|c| c.1).sum();
    if total == 0 {
        return domain("mixture needs at least one agent");
    }
    classes
        .iter()
        .map(|(params, count)| {
            let w = *count as f64 / total as f64;
            let (dens, _) = lognormal_equilibrium(grid, params)?;
            Ok(dens.into_iter().map(|d| d * w).collect())
        })
        .collect()
}

/// Two-class form of [`mixture_approx`].
pub fn bipop_mixture_approx(
    grid: &SalaryGrid,
    class1: (ClassParams, u64),
    class2: (ClassParams, u64),
) -> Result<Vec<f64>> {
    mixture_approx(grid, &[class1, class2])
}

/// Equilibrium of a population split into classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    /// Combined density per level.
    pub densities: Vec<f64>,
    /// Density per class and level, `[class][level]`.
    pub class_densities: Vec<Vec<f64>>,
    /// Index of the class occupying each level.
    pub owner: Vec<usize>,
    /// Levels occupied by each class.
    pub partition: Vec<Vec<usize>>,
    /// Equilibrium payoff of each class, evaluated at the solution.
    pub h_star: Vec<f64>,
    /// Discrete normalization of each class, `sum over its levels of (1/S) exp(...)`.
    pub z: Vec<f64>,
    /// Multiplier implied by `z` through `Z = N w exp(lambda/gamma - (alpha+gamma)^2 / 4 beta gamma)`.
    pub lagrange_lambda: Vec<f64>,
    /// Largest relative spread of class payoffs over the class's own levels.
    pub flatness_residual: f64,
    /// Largest gain a class could get at a level it does not occupy (0 when none).
    pub exclusion_residual: f64,
    pub total_agents: f64,
    pub iterations: usize,
}

impl EquilibriumSolution {
    /// Largest `|lambda_j - h*_j|` relative to `max(1, |h*_j|)`.
    pub fn lambda_consistency(&self) -> f64 {
        self.lagrange_lambda
            .iter()
            .zip(&self.h_star)
            .map(|(l, h)| (l - h).abs() / h.abs().max(1.0))
            .fold(0.0, f64::max)
    }
}

/// Single-class equilibrium packaged with its payoff and normalization diagnostics.
pub fn single_class_equilibrium(
    grid: &SalaryGrid,
    params: &ClassParams,
    total_agents: u64,
) -> Result<EquilibriumSolution> {
    partitioned_equilibrium(grid, &[(*params, total_agents)], &PartitionOptions::default())
}
