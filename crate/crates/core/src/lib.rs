//! Simulation and exact analysis of the one-spin facilitated model on finite
//! graphs.
//!
//! * [`graph`]: lattices, edge-list graphs, balls, growth checks and block
//!   partitions.
//! * [`model`]: volumes, boundary conditions, configurations, constraints,
//!   observables and initial laws.
//! * [`kmc`]: continuous-time Monte Carlo with replica averaging.
//! * [`exact`]: generators of the full and restricted chains, spectral gaps,
//!   transient laws and checks of the variance and path inequalities.
//! * [`experiments`]: relaxation, persistence and gap studies with decay fits.
//! * [`cli`]: the `kcmlab` command-line front end.

pub mod cli;
pub mod exact;
pub mod experiments;
pub mod graph;
pub mod kmc;
pub mod model;
