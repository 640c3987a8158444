//! Numerical laboratory for empirical spectral projectors of covariance
//! operators: relative perturbation bounds, quantitative limit-law
//! quantities, and a multiplier-bootstrap confidence procedure, checked on
//! finite-dimensional models with controlled eigenvalue decay.

// Negated float comparisons in validation guards are deliberate: `!(x > 0.0)`
// also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod config;
pub mod error;
pub mod experiments;
pub mod law;
pub mod metrics;
pub mod model;
pub mod operator;
pub mod parallel;
pub mod report;
pub mod rng;
pub mod sample;
pub mod spectral;

pub use error::{Error, Result};
pub use operator::{
    eigh, hs_distance_sq, operator_norm, projector, schatten_norm, EigenSystem, IndexBlock,
    Schatten, SymOperator,
};
pub use spectral::SpectralModel;
