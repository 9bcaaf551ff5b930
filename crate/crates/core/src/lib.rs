pub mod error;
pub mod nn;
pub mod par;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
pub mod convgru;
pub mod gradcheck;
pub mod encoder;
pub mod generator;
pub mod discriminator;
pub mod media;
pub mod metrics;
pub mod dataset;
pub mod synth;
pub mod optim;
pub mod trainer;
