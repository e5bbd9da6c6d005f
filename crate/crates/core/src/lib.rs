//! Monte Carlo laboratory for nonconventional sums
//! `ξ_N(t) = N^{-ν/2} Σ_{n∈Δ_N(t)} (F(X(q_1(n)), …, X(q_ℓ(n))) − F̄)` over
//! finite-range random fields on `ℤ^ν`: field generation, the
//! F-decomposition, the limit covariance, block schedules, and the
//! statistical checks of the functional CLT.

pub mod cli;
pub mod config;
pub mod covariance;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod noise;
pub mod observables;
pub mod qmaps;
pub mod quadrature;
pub mod random_fields;
pub mod schedule;
pub mod stats;
pub mod summation;
pub mod sums;
