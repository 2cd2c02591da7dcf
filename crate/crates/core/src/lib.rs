//! Desk-scale laboratory for representation collapse in federated learning.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense matrices, Jacobi eigen/singular value solvers, seeded RNG streams
//! - [`nn`]: small feed-forward models with a hand-written backward pass and SGD
//! - [`decorr`]: correlation statistics and the decorrelation regularizer with its gradient
//! - [`data`]: Gaussian-mixture datasets, IDX ingestion, Dirichlet label partitioning
//! - [`fed`]: client sampling, local training, FedAvg / FedProx / FedAvgM aggregation
//! - [`theory`]: gradient-flow checks on deep linear networks
//! - [`analysis`]: representation covariance spectra and collapse metrics
//! - [`cli`]: config-driven frontend used by the `feddecorr` binary
//!
//! Runnable walkthroughs for each capability live in `examples/`.

// `!(x > 0.0)` guards are how NaN gets rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod data;
pub mod decorr;
pub mod error;
pub mod fed;
pub mod linalg;
pub mod nn;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng};
