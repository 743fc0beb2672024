pub mod autodiff;
pub mod cli;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod pl;
pub mod preprocess;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
