//! CE-FPN detection neck on a small, self-contained tensor engine.
//!
//! * [`tensor`]: dense NCHW tensors, forward kernels, reverse-mode tape.
//! * [`neck`]: pixel shuffle, sub-pixel skip fusion, context enhancement,
//!   channel-attention guidance and the assembled forward pass.
//! * [`cost`]: static parameter and FLOP accounting.
//! * [`gradcheck`]: central finite-difference checks for every op and for the
//!   whole neck.

pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod neck;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, GradTape, LinearSpec, Scalar, Shape, Tensor, Var};
