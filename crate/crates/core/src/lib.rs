pub mod data;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod losses;
pub mod matching;
pub mod models;
pub mod nn;
pub mod par;
pub mod rng;
pub mod training;
pub mod viz;

pub use error::{Error, Result};
