//! Dense-array numerics with reverse-mode differentiation, standard layers,
//! losses and Adam — everything needed to train and differentiate the
//! networks in this crate.

pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;

pub use layers::{Layer, LayerCache, LayerSpec};
pub use model::{seeded_rng, softmax_temperature, Gradients, Model, SeededRng, Tape};
pub use optim::{adam_step, AdamState};
pub use tensor::Tensor;
