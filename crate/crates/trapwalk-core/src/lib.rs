//! Monte Carlo simulation and analysis of biased random walks among
//! heavy-tailed random conductances on the integer lattice.
//!
//! The crate covers the full pipeline: reproducible lazily sampled
//! environments ([`env`]), the enhanced walk with its backtracking
//! functional ([`walk`]), regeneration-block extraction and trap
//! classification ([`regen`]), the collapsed-edge trap model with exact
//! excursion laws and couplings ([`trap`]), exact finite-network oracles
//! ([`network`]), and the statistical verification layer for the limit
//! theorems ([`scaling`], [`stats`]).

pub mod env;
pub mod lattice;
pub mod network;
pub mod regen;
pub mod scaling;
pub mod stats;
pub mod trap;
pub mod walk;
