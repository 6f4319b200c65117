//! Co-clustering of samples and species in large sparse count matrices.
//!
//! The pipeline fits a hierarchical Bayesian Poisson factorization by Gibbs
//! sampling (initialized at an approximate MAP estimate), sparsifies the
//! species loadings by decoupled reweighted-l1 estimation, relates sample
//! factors to covariates through a logistic-normal regression, and ranks
//! model-based indicator species. [`eval`] holds conditional prediction,
//! cross-validated AUC, WAIC, posterior predictive checks and ESS.
//!
//! Data-parallel sections use rayon when the `parallel` feature is enabled
//! (the default) and the caller passes [`Exec::Parallel`]. Results do not
//! depend on the execution mode.

pub mod counts;
pub mod decouple;
pub mod diagnostics;
pub mod dist;
pub mod error;
pub mod eval;
pub mod indicators;
pub mod map_init;
pub mod model;
pub mod par;
pub mod polya_gamma;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod special;
pub mod summaries;

pub use counts::{
    load_attributes, load_counts, load_covariates, load_sites, CovariateTable, Entry, SparseCounts,
    SparsityReport, SpeciesAttributes, SpeciesRecord,
};
pub use error::{Error, Result};
pub use model::{HyperParams, ModelState};
pub use par::Exec;
pub use sampler::{run_chain, ChainConfig};
pub use summaries::{Draw, PosteriorSummaries};
