//! Tests for contagion versus latent confounding in each variable layer of a
//! social network, and estimation of network causal effects under full
//! interference with either mechanism present.

// NaN must fail range checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dgp;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod glm;
pub mod io;
pub mod mechtest;
pub mod mvn;
pub mod network;
pub mod rng;
pub mod sgraph;

pub use data::NetworkData;
pub use error::{Error, Result};
