pub mod attribution;
pub mod baselines;
pub mod error;
pub mod harness;
pub mod layout;
pub mod models;
pub mod netcore;
pub mod preprocessing;
pub mod spectra;
pub mod surrogate;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
