//! Dynamic residual self-attention network (DRSAN) for lightweight
//! single-image super-resolution.
//!
//! The crate is self-contained: a small rank-4 tensor type with tape-based
//! reverse-mode differentiation ([`autograd`]), the network ([`model`]),
//! image handling and bicubic degradation ([`image`]), Adam training
//! ([`train`]), PSNR/SSIM evaluation ([`eval`]) and the attention
//! inspection tools ([`analysis`]).

pub mod analysis;
pub mod autograd;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, NetworkConfig, Preset};
pub use tensor::{Real, Shape, Tensor};
