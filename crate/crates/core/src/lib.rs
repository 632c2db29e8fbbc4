//! DialogVED: a latent-variable transformer encoder-decoder for dialog
//! response generation.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`] – dense tensors, a tape-based reverse-mode autodiff graph,
//!   a seeded random stream and a finite-difference gradient checker.
//! * [`text`] – word-level vocabulary with the reserved special symbols.
//! * [`corpus`] – dialog loading, context/response pair extraction, span
//!   masking and length-sorted batching.
//! * [`model`] – dialog-aware embeddings, relative position buckets, the
//!   encoder, the prior network, the latent memory slot, the n-stream
//!   decoder and the output heads.
//! * [`objectives`] – masked-span, reconstruction, free-bits KL and
//!   bag-of-words losses.
//! * [`inference`] – latent sampling plus greedy, beam and top-K decoding.
//! * [`metrics`] – BLEU-n, Distinct-n and ROUGE-L.
//! * [`cli`] – run configuration, training loops, checkpointing and the
//!   command implementations behind the `dialogved` binary.

pub mod cli;
pub mod corpus;
mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod text;

pub use error::{Error, Result};
