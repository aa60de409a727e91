//! Potential-game toolkit for pay distributions.
//!
//! Agents choose among discrete salary levels with utility
//! `alpha ln S - beta (ln S)^2 - gamma ln N`, where `N` is the number of
//! agents already at the level. The game admits a strictly concave potential
//! whose maximizer is a lognormal density over the levels; with two agent
//! classes the equilibrium splits the levels between the classes.
//!
//! Modules:
//! - [`model`]: grids, class parameters, population states and payoffs.
//! - [`potential`]: game potentials, entropy and the free-energy identity.
//! - [`equilibrium`]: closed-form and partitioned equilibria.
//! - [`dynamics`]: mean-field replicator integration and the agent simulation.
//! - [`fitting`]: lognormal and power-law tail fits, distribution distances.
//! - [`config`]: JSON scenario documents.

pub mod config;
pub mod dynamics;
pub mod equilibrium;
mod error;
pub mod fitting;
pub mod model;
pub mod potential;

pub use error::{Error, Result};
pub use model::{ClassParams, EnergyGrid, LevelGame, PopulationState, SalaryGrid, Scenario};
