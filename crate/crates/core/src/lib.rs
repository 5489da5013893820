pub mod diffusion;
pub mod ela;
pub mod error;
pub mod harness;
pub mod meta;
pub mod mmcci;
pub mod nn;
pub mod problems;
pub mod rng;
pub mod saea;
pub mod surrogate;

pub use error::{Error, Result};
