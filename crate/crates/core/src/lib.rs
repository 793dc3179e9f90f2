//! Parallel Koopman subsystem identification and partition-based distributed
//! moving horizon estimation.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`simulate`] produces ground-truth trajectories for a process.
//! 2. [`identify`] scales the data, lifts it through per-subsystem
//!    dictionaries ([`lifting`]) and fits one linear Koopman model per
//!    subsystem by least squares.
//! 3. [`predict`] aggregates the subsystem models and builds the stacked
//!    window matrices.
//! 4. [`dmhe`] runs one constrained estimator per subsystem, each solving a
//!    small dense QP ([`qp`]) at every sampling instant.
//!
//! [`pipeline`] chains the stages from a [`config::RunConfig`].

pub mod config;
pub mod dmhe;
pub mod error;
pub mod identify;
pub mod io;
pub mod lifting;
pub mod linalg;
pub mod pipeline;
pub mod predict;
pub mod qp;
pub mod simulate;
pub mod topology;

pub use error::{Error, Result};
