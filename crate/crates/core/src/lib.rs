pub mod dataset;
pub mod error;
pub mod geometry;
pub mod infer;
pub mod io;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod phantom;
pub mod projector;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
