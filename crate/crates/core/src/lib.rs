//! Sequential design on Gaussian random functions.
//!
//! The crate realizes draws of a Gaussian random function on finite candidate
//! sets, conditions them through the canonical Gaussian conditional, selects
//! evaluation locations with probability-of-improvement, expected-improvement
//! or Thompson rules, and ships a Monte Carlo harness that checks whether a
//! conditional-distribution formula may be fed the random locations those
//! rules produce — including a deliberately broken formula that demonstrates
//! when it may not.

pub mod acquisition;
pub mod conditional;
pub mod error;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sequential;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
