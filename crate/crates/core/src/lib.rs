pub mod crf;
pub mod error;
pub mod field;
pub mod geodesic;
pub mod gradcheck;
pub mod imageio;
pub mod metrics;
pub mod netzoo;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
