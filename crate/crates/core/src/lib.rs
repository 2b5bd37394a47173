//! Large-deviations estimates of buffer-overflow probability for a queue fed
//! by a Markov-modulated source, built from a finite observed state trace.
//!
//! The pipeline is: count pair frequencies of the trace ([`markov`]), compute
//! the decay rate `theta*` of a candidate chain ([`ldcore`], [`spectral`]),
//! minimize the weighted sum of decay rate and relative entropy
//! ([`optimizer`]), and read off the estimates ([`estimators`]). [`simkit`]
//! generates synthetic traces and simulates the queue directly.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimators;
pub mod io;
pub mod ldcore;
pub mod markov;
pub mod optimizer;
pub mod simkit;
pub mod spectral;

pub use error::{Error, Result};
pub use estimators::{estimate, EstimateReport, EstimateRequest};
pub use ldcore::{
    classify_region, grad_theta_star, lambda_a, mean_arrival_rate, theta_star, ArrivalModel, LdConfig, RegionLabel,
    ServiceModel, StateLaw,
};
pub use markov::{
    compute_empirical_measure, is_irreducible, mle_transition, stationary_distribution, EmpiricalMeasure, StateTrace,
    TransitionMatrix,
};
pub use optimizer::{algorithm_a, algorithm_b, ObjectiveParams, OptimizerConfig, SolveTrace, Termination};
pub use simkit::{generate_trace, simulate_queue, QueueSimConfig, TailEstimate};
pub use spectral::{perron, SpectralTriple};
