//! Target-aware network adaptation.
//!
//! Fine-tunes a convolutional network on a target task, profiles per-filter
//! activations over the training set, removes the least-activated filters
//! of globally low-priority layers, and repeats. Parameter and FLOP
//! accounting, ablation baselines and the on-disk formats live alongside.

pub mod adapt;
pub mod cli;
pub mod data;
pub mod desk;
pub mod error;
pub mod formats;
pub mod layers;
pub mod prune;
pub mod stats;
pub mod surgery;
pub mod tensor;
pub mod train;

pub use error::{Error, FormatError, Result};
pub use layers::{LayerKind, LayerSpec, Mode, Network, Param};
pub use tensor::{Rng, Scalar, Tensor};
