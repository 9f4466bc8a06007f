//! Hierarchy-aware encoding of source code.
//!
//! This crate learns vector representations of code snippets from the
//! hierarchical structure of their abstract syntax trees. An AST is encoded
//! by a stack of residual self-attention graph layers; the encoder is
//! pretrained with two self-supervised objectives derived from node depth
//! (level classification and a level-gap triplet loss) and then reused for
//! classification, clone detection, and clustering.
//!
//! The crate is `no_std`-compatible (with `alloc`); everything here is pure
//! computation on in-memory data. File formats, the CLI, and threading live
//! in the companion `heloc-cli` crate.
//!
//! Module map:
//! - [`ast`]: demo-language parser, AST interchange, levels, paths,
//!   adjacency, and triplet sampling.
//! - [`numerics`]: dense `f64` matrices with tape-based reverse-mode
//!   differentiation and a finite-difference gradient checker.
//! - [`embed`]: deterministic n-gram feature hashing of node and path
//!   strings, and the path-augmented input matrix.
//! - [`rsgnn`]: the residual self-attention GNN encoder.
//! - [`hcl`]: hierarchical contrastive pretraining, Adam, checkpoints.
//! - [`downstream`]: pooled code vectors, classification, clone detection,
//!   k-means clustering, and evaluation metrics.
//! - [`synth`]: synthetic demo-language program generators for experiments.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod ast;
pub mod downstream;
pub mod embed;
pub mod hcl;
pub mod numerics;
pub mod rsgnn;
pub mod synth;

mod mathx;

pub use ast::{AdjacencyPack, AstError, AstGraph, AstNode, Caps, TripletBatch};
pub use embed::{EmbedderConfig, InputPack};
pub use hcl::{Checkpoint, HclParams, TrainConfig, TrainError};
pub use numerics::{Param, ShapeError, Tape, Tensor2, Var};
pub use rsgnn::{Activation, EncoderOptions, RsgnnLayerParams};
