//! CPU video frame interpolation with a pyramid recurrent network.
//!
//! The crate is layered: [`tensor`] is a small NCHW tensor engine with
//! reverse-mode differentiation, [`warp`] adds forward splatting and
//! correlation volumes, [`imaging`] handles PNG frames and pyramids,
//! [`model`] is the network and its recurrence, [`loss`] holds the training
//! losses and quality metrics, and [`train`] the optimisation loop.

pub mod error;
pub mod imaging;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;
pub mod verify;
pub mod warp;

pub use error::{Error, Result};
pub use imaging::Frame;
pub use model::{Model, ModelConfig, RunOptions, SkipPolicy};
pub use tensor::{Tensor, Var};
