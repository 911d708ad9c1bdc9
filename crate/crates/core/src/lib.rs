//! Joint training of a short-run Gaussian diffusion sampler and an
//! energy-based model through maximum-entropy inverse reinforcement learning.
//!
//! The sampler is updated by dynamic programming: value functions estimate
//! the cost-to-go of each denoising step, so no gradient ever flows back
//! through the whole trajectory.

pub mod data;
pub mod diffusion;
pub mod energy;
pub mod error;
pub mod eval;
pub mod nets;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
