//! Deterministic f64 tensor math with reverse-mode autodiff.
//!
//! The crate is the numeric substrate for the `llb` segmentation workspace:
//! a dense [`Tensor`] type, a recording/eager [`Ctx`] with the op set the
//! model needs (convolution, attention primitives, normalization, bilinear
//! resampling, fused losses), data-parallel kernels with a sequential
//! fallback behind the `parallel` feature, and a seeded portable RNG.
//!
//! Determinism is a hard guarantee: every kernel assigns each output element
//! to exactly one task, so results are bitwise identical across thread
//! counts and with the `parallel` feature disabled.

pub mod kernels;
pub mod par;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use rng::Rng;
pub use tape::{Ctx, Gradients, Var};
pub use tensor::Tensor;
