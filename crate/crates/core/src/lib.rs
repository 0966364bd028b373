//! Rateless auto-encoders: latent tail-drop training, a PCA baseline, and an
//! evaluation harness that sweeps the number of surviving latents.

pub mod checkpoint;
#[cfg(feature = "cli")]
pub mod cli;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod optim;
pub mod pca;
pub mod regularizers;

pub use error::{Error, Result};
