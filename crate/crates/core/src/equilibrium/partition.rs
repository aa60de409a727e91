//! Equilibrium of a population made of several preference classes.
//!
//! All classes share the congestion term: a class-`j` agent at level `i`
//! earns `b_j(i) - gamma_j ln(N x_i)` with `x_i` the combined density. At
//! equilibrium every class is indifferent across its own levels and would
//! lose by moving into a level held by another class, which forces
//!
//! ```text
//! ln x_i = max_j  l_j(i),   l_j(i) = ln w_j + ln[(1/S_i) exp(-(ln S_i - mu_j)^2 / 2 sigma_j^2)] - ln Z_j
//! ```
//!
//! with `Z_j` summed over the levels class `j` holds. The solver is a
//! best-response iteration over partitions: it moves one level at a time to
//! the class that gains most from it until no class gains anywhere, or until
//! the iteration revisits a partition. On a discrete grid the exact
//! equilibrium can require one level shared by two classes at an interface;
//! in that case the revisited cycle is resolved to the partition with the
//! smallest gain, which is reported as `exclusion_residual`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{log_sum_exp, params_to_lognormal, EquilibriumSolution};
use crate::error::{domain, Error, Result};
use crate::model::{ClassParams, SalaryGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionOptions {
    pub max_iterations: usize,
    /// Densities below this fraction of the largest density count as absent
    /// when the per-class level sets are extracted.
    pub density_threshold: f64,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            density_threshold: 1e-12,
        }
    }
}

/// Classes with identical preferences are indistinguishable and solved as one.
struct Group {
    params: ClassParams,
    members: Vec<usize>,
    log_weight: f64,
    /// `ln[(1/S_i) exp(-(ln S_i - mu)^2 / 2 sigma^2)]` per level.
    level_log_weights: Vec<f64>,
}

fn groups_of(grid: &SalaryGrid, classes: &[(ClassParams, u64)]) -> Result<Vec<Group>> {
    let total: u64 = classes.iter().map(|c| c.1).sum();
    let mut groups: Vec<Group> = Vec::new();
    for (j, (params, count)) in classes.iter().enumerate() {
        params.validate()?;
        if *count == 0 {
            return domain(format!("class {} must have at least one agent", j + 1));
        }
        match groups.iter_mut().find(|g| g.params == *params) {
            Some(g) => {
                g.members.push(j);
                g.log_weight = (g.log_weight.exp() + *count as f64 / total as f64).ln();
            }
            None => {
                let ln = params_to_lognormal(params)?;
                groups.push(Group {
                    params: *params,
                    members: vec![j],
                    log_weight: (*count as f64 / total as f64).ln(),
                    level_log_weights: grid.levels().iter().map(|&s| ln.log_weight(s)).collect(),
                });
            }
        }
    }
    Ok(groups)
}

/// Per-group candidate log-densities `l_g(i)` under a given owner assignment.
fn candidates(groups: &[Group], owner: &[usize]) -> Vec<Vec<f64>> {
    groups
        .iter()
        .enumerate()
        .map(|(g, grp)| {
            let owned = owner
                .iter()
                .zip(&grp.level_log_weights)
                .filter(|(o, _)| **o == g)
                .map(|(_, w)| *w);
            let mut ln_z = log_sum_exp(owned);
            if ln_z == f64::NEG_INFINITY {
                // owns nothing yet: normalize over the whole grid instead
                ln_z = log_sum_exp(grp.level_log_weights.iter().copied());
            }
            grp.level_log_weights
                .iter()
                .map(|w| grp.log_weight + w - ln_z)
                .collect()
        })
        .collect()
}

/// Largest payoff gain `gamma_g (l_g(i) - ln x_i)` over non-owners, with its location.
fn worst_gain(groups: &[Group], owner: &[usize], cand: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut worst = (f64::NEG_INFINITY, 0, 0);
    for (i, &o) in owner.iter().enumerate() {
        let ln_x = cand[o][i];
        for (g, grp) in groups.iter().enumerate() {
            if g == o {
                continue;
            }
            let gain = grp.params.gamma * (cand[g][i] - ln_x);
            if gain > worst.0 {
                worst = (gain, i, g);
            }
        }
    }
    worst
}

/// Equilibrium of `classes` (parameters and agent counts) on `grid`.
///
/// Classes with identical parameters are merged and share every level in
/// proportion to their sizes; all other levels are held by exactly one class.
pub fn partitioned_equilibrium(
    grid: &SalaryGrid,
    classes: &[(ClassParams, u64)],
    opts: &PartitionOptions,
) -> Result<EquilibriumSolution> {
    if classes.is_empty() {
        return domain("need at least one class");
    }
    let groups = groups_of(grid, classes)?;
    let n = grid.len();

    // Start from the class with the largest weighted lognormal at each level.
    let full = candidates(&groups, &vec![usize::MAX; n]);
    let mut owner: Vec<usize> = (0..n)
        .map(|i| {
            (0..groups.len())
                .max_by(|&a, &b| full[a][i].total_cmp(&full[b][i]))
                .unwrap()
        })
        .collect();

    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut iterations = 0;
    loop {
        // A group without levels takes the level where it is most welcome.
        if let Some(g) = (0..groups.len()).find(|g| !owner.contains(g)) {
            let cand = candidates(&groups, &owner);
            let i = (0..n)
                .max_by(|&a, &b| {
                    (cand[g][a] - cand[owner[a]][a]).total_cmp(&(cand[g][b] - cand[owner[b]][b]))
                })
                .unwrap();
            owner[i] = g;
        }
        if groups.len() == 1 {
            break;
        }
        let cand = candidates(&groups, &owner);
        let (gain, level, to) = worst_gain(&groups, &owner, &cand);
        if best.as_ref().is_none_or(|(b, _)| gain < *b) {
            best = Some((gain, owner.clone()));
        }
        let scale = groups.iter().map(|g| g.params.gamma).fold(0.0, f64::max);
        if gain <= 1e-10 * scale {
            break;
        }
        if !seen.insert(owner.clone()) {
            owner = best.take().unwrap().1;
            break;
        }
        iterations += 1;
        if iterations > opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                residual: gain,
            });
        }
        owner[level] = to;
    }

    Ok(assemble(grid, classes, &groups, &owner, iterations, opts))
}

fn assemble(
    grid: &SalaryGrid,
    classes: &[(ClassParams, u64)],
    groups: &[Group],
    owner: &[usize],
    iterations: usize,
    opts: &PartitionOptions,
) -> EquilibriumSolution {
    let n = grid.len();
    let k = classes.len();
    let total_agents: f64 = classes.iter().map(|c| c.1 as f64).sum();
    let cand = candidates(groups, owner);
    let log_x: Vec<f64> = (0..n).map(|i| cand[owner[i]][i]).collect();
    let densities: Vec<f64> = log_x.iter().map(|l| l.exp()).collect();

    let mut class_densities = vec![vec![0.0; n]; k];
    let mut class_owner = vec![0; n];
    for (i, &g) in owner.iter().enumerate() {
        let grp = &groups[g];
        class_owner[i] = grp.members[0];
        let group_count: f64 = grp.members.iter().map(|&j| classes[j].1 as f64).sum();
        for &j in &grp.members {
            class_densities[j][i] = densities[i] * classes[j].1 as f64 / group_count;
        }
    }

    let max_density = densities.iter().copied().fold(0.0, f64::max);
    let partition: Vec<Vec<usize>> = class_densities
        .iter()
        .map(|row| {
            (0..n)
                .filter(|&i| row[i] > opts.density_threshold * max_density)
                .collect()
        })
        .collect();

    // Payoffs from the payoff formula at occupancy N x_i.
    let ln_n = total_agents.ln();
    let payoff = |j: usize, i: usize| {
        let p = &classes[j].0;
        p.base_payoff(grid.levels()[i]) - p.gamma * (ln_n + log_x[i])
    };

    let mut h_star = vec![0.0; k];
    let mut z = vec![0.0; k];
    let mut lagrange_lambda = vec![0.0; k];
    let mut flatness_residual: f64 = 0.0;
    let mut exclusion_residual: f64 = 0.0;
    for j in 0..k {
        let mass: f64 = class_densities[j].iter().sum();
        h_star[j] = (0..n)
            .map(|i| class_densities[j][i] * payoff(j, i))
            .sum::<f64>()
            / mass;
        let g = groups.iter().position(|g| g.members.contains(&j)).unwrap();
        let grp = &groups[g];
        let ln_z = log_sum_exp(
            (0..n)
                .filter(|&i| owner[i] == g)
                .map(|i| grp.level_log_weights[i]),
        );
        z[j] = ln_z.exp();
        let p = &grp.params;
        lagrange_lambda[j] = p.gamma
            * ((p.alpha + p.gamma).powi(2) / (4.0 * p.beta * p.gamma) + ln_z
                - ln_n
                - grp.log_weight);
        for i in 0..n {
            let h = payoff(j, i);
            if owner[i] == g {
                flatness_residual =
                    flatness_residual.max((h - h_star[j]).abs() / h_star[j].abs().max(1.0));
            } else {
                exclusion_residual = exclusion_residual.max(h - h_star[j]);
            }
        }
    }

    EquilibriumSolution {
        densities,
        class_densities,
        owner: class_owner,
        partition,
        h_star,
        z,
        lagrange_lambda,
        flatness_residual,
        exclusion_residual,
        total_agents,
        iterations,
    }
}

/// Two-class equilibrium.
pub fn bipop_equilibrium(
    grid: &SalaryGrid,
    class1: (ClassParams, u64),
    class2: (ClassParams, u64),
) -> Result<EquilibriumSolution> {
    partitioned_equilibrium(grid, &[class1, class2], &PartitionOptions::default())
}

/// Density step between two adjacent levels held by different classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceJump {
    /// Lower of the two adjacent levels.
    pub level: usize,
    pub jump: f64,
    /// Twice the largest local slope `|dx/dS| = |alpha - 2 beta ln S| / (gamma S) * x`
    /// of the two classes times the level spacing.
    pub bound: f64,
}

impl InterfaceJump {
    pub fn is_continuous(&self) -> bool {
        self.jump < self.bound
    }
}

/// Density jumps at every interface of `solution`.
pub fn interface_jumps(
    solution: &EquilibriumSolution,
    grid: &SalaryGrid,
    classes: &[(ClassParams, u64)],
) -> Vec<InterfaceJump> {
    let s = grid.levels();
    let x = &solution.densities;
    (0..s.len() - 1)
        .filter(|&i| solution.owner[i] != solution.owner[i + 1])
        .map(|i| {
            let slope = [i, i + 1]
                .into_iter()
                .flat_map(|lvl| {
                    [solution.owner[i], solution.owner[i + 1]].map(|j| {
                        let p = &classes[j].0;
                        ((p.alpha - 2.0 * p.beta * s[lvl].ln()) / (p.gamma * s[lvl]) * x[lvl]).abs()
                    })
                })
                .fold(0.0, f64::max);
            InterfaceJump {
                level: i,
                jump: (x[i + 1] - x[i]).abs(),
                bound: 2.0 * slope * (s[i + 1] - s[i]),
            }
        })
        .collect()
}
