//! Exact simulation of a nearest-neighbour random walk on the integers whose
//! jump rate across edge `e` at time `t` is `Λ_e(t)/t`, for nondecreasing
//! environment processes `Λ_e`, together with a coupling to a delayed simple
//! random walk and the statistics used to check diffusive behaviour.
//!
//! * [`env`]: edge processes, chiefly stationary renewal counting processes.
//! * [`walker`]: event-driven simulation and range bookkeeping.
//! * [`coupling`]: thinning coupling, failure detection and bias figures.
//! * [`stats`]: KS tests, confidence intervals and experiment reports.

pub mod coupling;
pub mod env;
pub mod error;
pub mod rng;
pub mod stats;
pub mod walker;

pub use error::{Error, Result};
