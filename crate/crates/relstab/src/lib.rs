//! Stability evaluation for feature-attribution explanations.
//!
//! The crate trains small tabular classifiers (logistic regression and a
//! 1-hidden-layer ReLU MLP), computes seven feature-attribution methods over
//! them, and scores each explanation's robustness to label-preserving input
//! perturbations with three relative stability metrics: relative input
//! stability (RIS), relative representation stability (RRS), and relative
//! output stability (ROS). Layer Lipschitz constants give per-point upper
//! bounds chaining the three metrics; the bounds module verifies them
//! empirically.
//!
//! Module map:
//! - [`data`]: CSV ingestion by schema, synthetic generators, splitting,
//!   standardization.
//! - [`model`]: predictors, analytic input gradients, RMSProp training.
//! - [`explain`]: the seven attribution methods plus an exact-Shapley oracle.
//! - [`neighborhood`]: label-preserving perturbation sampling.
//! - [`stability`]: the stability metrics and their division guards.
//! - [`bounds`]: operator norms, Lipschitz factors, bound verification.
//! - [`harness`]: the end-to-end experiment pipeline and CLI entry points.

pub mod bounds;
pub mod data;
pub mod error;
pub mod explain;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod neighborhood;
pub mod seeding;
pub mod stability;

pub use error::{Error, Result};
