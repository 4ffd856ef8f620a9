//! Trainable layers, the classification loss and the optimizer.

mod accumulate;
mod adam;
mod conv;
mod linear;
mod loss;
mod lstm;

pub use accumulate::{accumulate_gradients, AccumulationReport};
pub use adam::{Adam, AdamConfig};
pub use conv::Conv2dLayer;
pub use linear::Linear;
pub use loss::softmax_cross_entropy;
pub use lstm::LstmCell;
