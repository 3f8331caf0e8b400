//! Emulators for the time-dependent distribution coefficient `Kd`.
//!
//! The crate covers the data model and train/test protocol, an analytic
//! trajectory generator, DTW shape clustering, random-forest and
//! fully-connected-network learners, and the four surrogate formulations
//! built on top of them.

pub mod cluster;
pub mod data;
pub mod dtw;
pub mod emulators;
pub mod error;
pub mod forest;
pub mod io;
pub mod metrics;
pub mod neural;
pub mod params;
pub mod rng;
pub mod synthgen;

pub use error::{Error, Result};
