pub mod data;
pub mod error;
pub mod experiment;
pub mod gates;
pub mod gini;
pub mod nn;
pub mod par;
pub mod phe;
pub mod protocol;
pub mod rng;

pub use error::{Error, Party, Result};
