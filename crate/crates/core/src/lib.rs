//! Geodesics of the Wasserstein metric weighted by the congestion energy
//! `F = int u^q`, together with the tools needed to check their optimality
//! conditions numerically.
//!
//! | module | contents |
//! |---|---|
//! | [`fields`] | grids, densities, velocities, trapezoid quadrature, parabolic profiles |
//! | [`energy`] | `F`, `V`, the multiplicative and additive actions |
//! | [`transport`] | continuity residual, pushforward, velocity transport, tangent fields |
//! | [`variation`] | first variations along `id + eps xi` and their finite-difference oracles |
//! | [`residual`] | coefficients `H`, `K`, weak and strong residuals of the optimality system |
//! | [`selfsimilar`] | fixed-center and moving self-similar solutions |
//! | [`solver`] | two-endpoint solvers and reparametrizations |

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod curve;
pub mod energy;
pub mod error;
pub mod fields;
pub mod interp;
pub mod linalg;
pub mod residual;
pub mod selfsimilar;
pub mod solver;
pub mod transport;
pub mod variation;

pub use curve::Curve;
pub use energy::{ActionModel, ActionReport, EnergyParams};
pub use error::{Error, Result};
pub use fields::{make_grid, DensityField, ParabolicProfile, SpaceTimeGrid, VelocityField};
