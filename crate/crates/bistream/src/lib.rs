//! File formats, dataset storage and the command-line pipeline around
//! `bistream-core`.
//!
//! Tensors are stored in the FGT1 binary format ([`fgt`]); trained models
//! as a JSON manifest next to an FGT1 parameter stream ([`checkpoint`]);
//! datasets as one directory per sample ([`dataset`]). Every file is written
//! atomically.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod fgt;
pub mod fsutil;
pub mod pgm;
pub mod settings;

pub use error::{StoreError, StoreResult};
