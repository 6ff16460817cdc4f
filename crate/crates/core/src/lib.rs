pub mod cam;
pub mod crf;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod labels;
pub mod loss;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
