//! Homogenized micropolar thin-film lubrication with rough boundaries.
//!
//! The crate goes from fluid parameters and a periodic roughness profile to
//! the macroscopic pressure:
//!
//! 1. [`params`] validates the dimensionless parameters and the existence
//!    condition.
//! 2. [`coefficients`] evaluates the averaged coefficients `theta1, theta2,
//!    phi1, phi2` in closed form; [`oracle`] recomputes them from the
//!    underlying two-point problem by finite differences.
//! 3. [`cell`] solves the periodic corrector problems and integrates the
//!    flow factors `K1, L1, K2, L2`.
//! 4. [`reynolds`] solves the macroscopic Reynolds equation and rebuilds the
//!    averaged velocity and microrotation.
//! 5. [`config`] and [`pipeline`] drive the `micro-reynolds` binary.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod banded;
pub mod cell;
pub mod coefficients;
pub mod config;
pub mod oracle;
pub mod params;
pub mod pipeline;
pub mod q1;
pub mod reynolds;
pub mod roughness;
pub mod sparse;

pub use cell::{flow_factors, solve_correctors, CellSolution, FlowFactors, QuadratureField};
pub use coefficients::{profile, sample_field, theta_phi, CoefficientSample, Phi2Variant};
pub use config::{parse_config, RunConfig};
pub use oracle::{oracle_coefficients, solve_bvp, BvpLoad};
pub use params::{validate, FluidParams};
pub use pipeline::{run, RunOptions, RunReport, Stage};
pub use reynolds::{mass_residual, solve_pressure, MacroDomain, MacroSolution};
pub use roughness::RoughnessProfile;
