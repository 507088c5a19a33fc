//! Exact analysis on enumerable volumes: generators of the full and
//! restricted chains, spectral gaps, transients by uniformization, and
//! checkers for the variance and relaxation inequalities.

mod bounds;
mod chain;
mod lemmas;
mod paths;
mod spectral;
mod transient;

use thiserror::Error;

use crate::graph::GraphError;
use crate::model::ModelError;

pub use bounds::{
    check_simpatica, check_xi_drift, connected_subsets, envelope_shape, evaluate_inizio_bound, hat_gap_pipeline,
    xi_asymptote, xi_drift_rate,
    InizioBound, PipelineReport, SimpaticaReport, SimpaticaRow, XiDriftReport, XiDriftRow,
};
pub use chain::{
    block_gaps, build_generator, build_hat_chain, build_minimal_boundary_chain, build_taboo_chain,
    build_tilde_chain, decode, dirichlet_form, encode, entropy, local_variance_form, quadratic_form,
    region_constraint, variance, ChainKind, RateMatrix, MAX_SITES,
};
pub use lemmas::{
    check_tec1, check_tec2, check_two_block_lemma, chain_toward, LemmaCheck, ProductSpace, TwoBlockSetup,
};
pub use paths::{congestion_constant, vacancy_transport_path, CongestionReport};
pub use spectral::{
    lanczos_smallest, log_sobolev_safe_upper, log_sobolev_upper, spectral_gap, SpectralMethod,
    SpectralReport, DENSE_LIMIT,
};
pub use transient::{bernoulli, dirac, propagate, transient_expectation, TAIL_MASS};

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("volume of {sites} sites exceeds the enumeration limit of {max}")]
    TooLarge { sites: usize, max: usize },
    #[error("dimension {0} is too large for this computation")]
    TooLargeForDense(usize),
    #[error("state space is empty")]
    EmptyStateSpace,
    #[error("chain has a single state")]
    TrivialChain,
    #[error("chain is not reversible (detailed-balance residual {0:e})")]
    NonReversible(f64),
    #[error("chain is reducible: zero eigenvalue is not simple")]
    Reducible,
    #[error("block labels do not match the volume")]
    Labels,
    #[error("block {0} has no sites")]
    EmptyBlock(usize),
    #[error("length {got} does not match dimension {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("time {0} is not a finite nonnegative number")]
    BadTime(f64),
    #[error("configuration is not in the chain's state space")]
    StateOutside,
    #[error("function is negative at state {0}")]
    NegativeFunction(usize),
    #[error("function vanishes identically")]
    ZeroFunction,
    #[error("support condition fails at state {0:#b}")]
    SupportCondition(u32),
    #[error("invalid vertex chain: {0}")]
    BadChain(String),
    #[error("function is not centred (mean {0:e})")]
    NotCentered(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
