//! Boundary-driven stochastic energy-exchange chain.
//!
//! `N` cells between two heat baths exchange Beta(1, M - 1) fractions of
//! their energy at state-dependent rates. The crate simulates the jump
//! process exactly, computes its deterministic and Gaussian limits, the
//! mesoscopic SDE, the equilibrium profile and its conductivity, and runs
//! statistical experiments that compare simulation against those limits.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod export;
pub mod fluct;
pub mod jump;
pub mod linalg;
pub mod model;
pub mod ode;
pub mod rate;
pub mod rng;
pub mod stats;
pub mod verify;

pub use error::{ChainError, Result};
pub use fluct::{HMatrix, MatrixKind, MomentMatrix, NessGaussian, VarianceForm};
pub use jump::{EnsembleStats, PathFunctionals, Trajectory};
pub use model::{ChainConfig, EnergyState, EventRecord, ExchangeDraw};
pub use ode::{Conductivity, EquilibriumProfile, JacobianReport, OdeSolution};
pub use rate::{RateFunctionSpec, RateKind};
pub use verify::ExperimentReport;
