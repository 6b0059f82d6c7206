pub mod cli;
pub mod compositor;
pub mod dataset;
pub mod error;
pub mod imaging;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
