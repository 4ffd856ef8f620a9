//! Bi-stream attentive action detection.
//!
//! This crate holds the numeric and algorithmic core: a small reverse-mode
//! autodiff engine, the trainable layers built on it, the embedded-Gaussian
//! non-local block and temporal attention, the WGAN-GP joint regressor, the
//! bi-stream recognizer, the sliding-window detector, evaluation metrics and
//! a deterministic synthetic activity generator.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. File formats, dataset IO and the command-line pipeline live in
//! the companion `bistream` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod attention;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod nn;
pub mod params;
pub mod pose;
pub mod rng;
pub mod streams;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::{Real, Tensor};

/// Number of activity classes used throughout (background plus five actions).
pub const NUM_CLASSES: usize = 6;

/// Class names in label order. Index 0 is the background ("no action") class.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "background",
    "reach",
    "retract",
    "hand-in",
    "inspect-product",
    "inspect-shelf",
];

/// Label of the background class.
pub const BACKGROUND: usize = 0;
