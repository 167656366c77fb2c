pub mod autodiff;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod training;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
