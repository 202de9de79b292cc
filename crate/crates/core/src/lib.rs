pub mod cli;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod joint;
pub mod numeric;
pub mod pipeline;
pub mod text;
pub mod vision;
pub mod tensor;

pub use error::{CvlError, Result};
pub use tensor::Tensor;
