//! Minimal 1-D convolutional network with hand-written backpropagation.

mod layers;
mod loss;
mod network;

pub use layers::{Conv1d, Dense, Layer};
pub use loss::{argmax, softmax, softmax_cross_entropy};
pub use network::{Architecture, ConvBlock, ForwardCache, ForwardPass, GradientSet, Network};
