pub mod certificate;
pub mod chain;
pub mod dynamics;
pub mod error;
pub mod falsifier;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod segment;
pub mod stats;

pub use error::{Error, Result};
