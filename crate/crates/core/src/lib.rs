//! Nuclear spin diffusion around a quantum-dot electron.
//!
//! The pipeline runs bottom-up: microscopic couplings ([`model`]) feed the
//! pairwise flip-flop rates ([`rates`]), which are coarse-grained into a
//! spatially varying diffusion coefficient ([`dfield`]). The polarization
//! field is then propagated with a finite-difference solver ([`solver`]) and
//! reduced to the Overhauser field decay ([`observables`]). [`oracle`]
//! integrates the discrete rate equation directly on small lattices as a
//! check on the coarse-grained path, and [`scenarios`] bundles the standard
//! runs.

pub mod model;
pub mod rates;
pub mod dfield;
pub mod solver;
pub mod observables;
pub mod oracle;
pub mod config;
pub mod output;
pub mod scenarios;
