//! Deterministic federated-optimization laboratory.
//!
//! The crate simulates communication-round training of a shared model
//! across heterogeneous clients and verifies, at desk scale, the exact
//! reductions and deviation rates of the decoupled-momentum family of
//! methods against their centralized counterparts.
//!
//! * [`models`] — loss/gradient oracles (quadratic, softmax regression,
//!   small `tanh` net) with a finite-difference verifier.
//! * [`data`] — synthetic federations, IID/Dirichlet/quantity-skew
//!   partitioning, CSV ingestion, seeded batch sampling.
//! * [`local`] — per-client update rules (decoupled, coupled, proximal).
//! * [`server`] — weighted aggregation and the global update rules
//!   (decoupled SGDM/Adam/AdaGrad, averaging, pseudo-gradient, restart).
//! * [`engine`] — round orchestration, scheduling, metrics, checkpoints.
//! * [`centralized`] — reference single-machine trainers.
//! * [`analysis`] — deviation traces, growth fits, drift probe, and the
//!   exact-reduction suite.
//!
//! The numeric core is generic over the floating-point scalar through
//! [`scalar::Scalar`]; orchestration runs in `f64`, and the aliases
//! below fix the common `f64` instantiations.

pub mod analysis;
pub mod centralized;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod local;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod server;
pub mod vector;

pub use error::{Error, Result};

/// Double-precision parameter vector (the default instantiation).
pub type ParamVector64 = vector::ParamVector<f64>;
/// Double-precision dense matrix.
pub type Matrix64 = linalg::Matrix<f64>;
/// Double-precision loss oracle.
pub type Model64 = models::Model<f64>;
/// Double-precision mini-batch.
pub type Batch64 = models::Batch<f64>;
/// Double-precision federation.
pub type Federation64 = data::Federation<f64>;
/// Double-precision client dataset.
pub type ClientDataset64 = data::ClientDataset<f64>;
/// Double-precision client report.
pub type ClientReport64 = local::ClientReport<f64>;
/// Double-precision server state.
pub type ServerState64 = server::ServerState<f64>;
