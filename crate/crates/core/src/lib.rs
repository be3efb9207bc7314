//! Numerical toolkit for critical exponents of semilinear elliptic inequalities
//! `ℒu ≥ K(x) u^p` near an isolated singularity.

pub mod catalog;
pub mod cli;
pub mod config;
pub mod criteria;
pub mod envelopes;
pub mod fields;
pub mod growth;
pub mod ode;
pub mod profile;
pub mod quad;
pub mod report;
pub mod shooting;
pub mod verify;
