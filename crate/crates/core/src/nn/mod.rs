//! Reverse-mode differentiation and the network layers built on it.

mod layers;
mod matrix;
mod optim;
mod params;
mod tape;

pub use layers::{relative_positions, AttentionNorm, ChebConv, Linear, Mlp2, PointTransformer, PointwiseMlp};
pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use params::{accumulate_gradients, GradAccumulator, ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
