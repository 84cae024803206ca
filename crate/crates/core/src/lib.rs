pub mod association;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod diffcore;
pub mod encoder;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod pretext;
pub mod sim;

pub use error::{Error, Result};
