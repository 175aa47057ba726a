//! Minimal CPU tensor/network core: forward inference, cross-entropy,
//! backpropagation to the input, penultimate embeddings and SGD training.
//!
//! Parameters and activations are `f32`; softmax, losses and bias reductions
//! accumulate in `f64`.

mod layers;
mod network;
mod tensor;
mod train;
pub mod weights;

pub use layers::{ActShape, Conv2d, Dense, Layer};
pub use network::{argmax, softmax, softmax_cross_entropy, Architecture, Network, Prediction};
pub use tensor::{ImageTensor, Shape3};
pub use train::{accuracy, train, TrainConfig, TrainReport};
pub use weights::{load_weights, save_weights};
