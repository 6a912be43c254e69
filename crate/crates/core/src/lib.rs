//! End-to-end speech-to-text translation with adaptive acoustic states.
//!
//! The AdaST decoder concatenates the encoder's acoustic states with the
//! target embeddings and runs both through every decoder block under a
//! single speech-text mixed attention (STMA) whose mask has four blocks:
//! acoustic-to-acoustic, acoustic-to-target (always masked),
//! target-to-acoustic and causal target-to-target. A conventional
//! CNN+Transformer baseline and a static-memory ablation share the same
//! encoder and training/decoding machinery.

pub mod cli;
pub mod decoding;
pub mod error;
pub mod layers;
pub mod masks;
pub mod model;
pub mod numerics;
pub mod probe;
pub mod synthdata;
pub mod training;

pub use error::{Error, Result};

/// Reserved token ids shared by data, training and decoding.
pub mod tokens {
    pub const PAD: usize = 0;
    pub const EOS: usize = 1;
    pub const BOS: usize = 2;
    /// First id available to ordinary tokens.
    pub const FIRST_CONTENT: usize = 3;
}
