//! Small explicit-backprop neural network kernel.
//!
//! Each layer exposes a `forward` that returns a cache and a `backward`
//! that consumes it, accumulating parameter gradients into a zeroed copy
//! of the layer. Training loops chain these by hand.

pub mod adam;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod lstm;
pub mod tensor;

pub use adam::{adam_update, Adam, AdamConfig, AdamState};
pub use conv::{conv2d_forward, Conv2d};
pub use dense::{fc_forward, Dense};
pub use gradcheck::{gradient_check, ParamSet};
pub use lstm::{Lstm, LstmState};
pub use tensor::{Activation, Tensor};
