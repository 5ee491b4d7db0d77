//! Tensor math, seeded randomness, layers and the optimizer.

pub mod io;
pub mod layers;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use io::{decode_tensor, encode_tensor, read_tensor, write_tensor};
pub use layers::{glorot_init, Gradients, Layer, LayerKind, Mode, Tape};
pub use optim::{adam_step, OptimizerState};
pub use rng::{seed_rng, Rng};
pub use tensor::{Scalar, Tensor};
