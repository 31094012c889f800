pub mod audio;
pub mod conditioning;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod format;
pub mod metrics;
pub mod motion;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
