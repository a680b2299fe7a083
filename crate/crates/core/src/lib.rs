//! Kernelized relative positional embeddings for causal self-attention.
//!
//! The crate is organized bottom-up:
//!
//! * [`kernel`]: the shift-invariant kernel variants and the bias/weight
//!   matrices they induce.
//! * [`verify`]: numerical (conditional) positive-definiteness checks and the
//!   geometric search for a PSD-making shift constant.
//! * [`attention`]: single-head causal attention over the composite kernel,
//!   with explicit adjoints.
//! * [`model`]: a small pre-norm decoder with hand-written reverse-mode
//!   gradients, Adam training and a binary checkpoint format.
//! * [`eval`]: non-overlapping and position-wise perplexity, a windowed
//!   baseline and paired t-tests across seeds.
//! * [`analysis`]: effective-length analysis of trained kernels.
//! * [`corpus`]: byte tokenization and the bundled synthetic corpus.
//! * [`plot`]: small SVG line charts.

pub mod analysis;
pub mod attention;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod model;
pub mod plot;
pub mod verify;

pub use error::{KerpleError, Result};
pub use kernel::{build_matrices, BiasMatrix, KernelSpec, ParamVector, Variant, WeightMatrix};
