//! Hand-differentiated convolutional layers, the trainable desk stack,
//! the Adam optimizer and weight-free architecture descriptors.

mod adam;
mod conv;
pub mod descriptor;
mod network;

pub use adam::{Adam, PlateauScheduler};
pub use conv::{elu, pixel_shuffle, pixel_unshuffle, reflect_pad, Conv2d};
pub use descriptor::{LayerKind, LayerSpec};
pub use network::{Dropout, ForwardCache, Gradients, Layer, Network};
