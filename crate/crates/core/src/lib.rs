//! Fair classification when the sensitive attribute is not observed.
//!
//! The pipeline has two stages. A variational estimator learns a latent
//! code `A` for the unobserved sensitive attribute from the "relevant"
//! features and the label, optionally disentangled from the label-related
//! code `Z` by a neural mutual-information penalty. A downstream classifier
//! is then trained with cross-entropy plus a penalty on the absolute
//! covariance between its predicted probabilities and `A`.
//!
//! Everything numeric runs on a small dense reverse-mode tape
//! ([`tape`]) with 64-bit floats.

pub mod classifier;
pub mod data;
pub mod error;
pub mod estimator;
pub mod gradcheck;
pub mod metrics;
pub mod mine;
pub mod model_io;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
