pub mod al;
pub mod corpus;
pub mod crf;
pub mod embedding;
pub mod error;
pub mod interface;
pub mod optim;
pub mod positive;
pub mod scoring;
pub mod synthetic;

pub use error::{Error, Result};
