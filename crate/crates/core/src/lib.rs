pub mod autograd;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod evalkit;
pub mod manifest;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod pseudosup;
pub mod retrieval;
pub mod rng;

pub use error::{Error, Result};
