pub mod diffcore;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod model;
pub mod operators;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
