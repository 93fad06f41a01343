//! Finite-state hidden Markov models with nonparametric emission families.
//!
//! The crate covers the model objects (block marginal densities, stationary
//! laws, smoothing laws), the distances used to measure posterior
//! concentration (`D_l`, emission L1 distance, label-switching alignment,
//! a KL-rate bound), Dirichlet-process style priors, a Gibbs sampler, and
//! experiment drivers that check concentration empirically.
//!
//! Parallel evaluation is on by default (`parallel` feature, backed by
//! rayon). Building with `--no-default-features` runs every loop
//! sequentially with bit-identical results.

pub mod emissions;
pub mod error;
pub mod experiments;
pub mod hmm;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod par;
pub mod priors;
pub mod rng;
pub mod stats;

pub use emissions::{
    emission_d, l1_distance, DiscreteEmission, EmissionModel, EvalMode, GaussianAtom,
    GaussianMixtureEmission, Obs, TranslatedEmission,
};
pub use error::{Error, Result};
pub use hmm::{
    forgetting_bound, log_likelihood_forward, marginal_density, simulate, simulate_seeded,
    smoothing_exact, smoothing_windowed, stationary_distribution, HmmParams, SmoothingTable,
    StationaryLaw, TransitionMatrix,
};
pub use stats::Estimate;
