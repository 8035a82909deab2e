//! Blocked Gibbs sampler.
//!
//! A sweep updates, in order, the cluster labels (collapsed over atoms),
//! the cluster atoms, the site-specific coefficients, the loadings, the
//! coregionalization entries, the noise variances and the factor paths.

pub mod blocks;
pub mod chain;

pub use blocks::{data_loglik, Fields, SamplerContext};
pub use chain::{
    chain_rng, drive, ensure_runnable, initial_state, run_chain, run_chains, BlockTimings, ChainOutput, ChainRun, Checkpoint,
    Sampler, SweepReport, BLOCKS,
};
