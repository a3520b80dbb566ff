//! Unified visual-textual embeddings for zero-exemplar video event retrieval.
//!
//! The pipeline: text is normalized and weighted ([`text`]), projected into a
//! latent topic space ([`lsi`]), and fed together with pooled video features
//! ([`io`]) into two perceptron towers ([`nn`]) trained under metric and
//! classification losses ([`losses`], [`trainer`]). Noisy training videos can
//! be pruned beforehand ([`pruner`]); retrieval and AP/mAP evaluation live in
//! [`retrieval`].

pub mod error;
pub mod io;
pub mod lsi;
pub mod losses;
pub mod nn;
pub mod pruner;
pub mod retrieval;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
