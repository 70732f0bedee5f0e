//! Resource allocation for symbiotic radio with hybrid active-passive secondary users.
//!
//! Secondary users split each block between passive backscatter, which rides
//! on the primary transmitter's signal, and active transmission powered by
//! harvested energy. The crate models the resulting rates and energy flows,
//! solves the total-rate maximization for a fixed SIC ordering (successive
//! convex approximation) and for a jointly optimized ordering (block
//! coordinate descent with a penalty relaxation), and ships brute-force
//! oracles and a sweep runner for validation.

pub mod cvxcore;
pub mod dynamic_sic;
pub mod error;
pub mod experiment;
pub mod fixed_sic;
pub mod oracles;
pub mod ratemodel;
pub mod scenario;

pub use error::{Error, Result};
