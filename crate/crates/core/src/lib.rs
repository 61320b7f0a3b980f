//! Multi-modal question answering over a unified language space.
//!
//! Tables, images (through their caption and object metadata) and text
//! passages are rendered into plain-language clues. Questions are answered
//! in three steps that all operate on that text: dense top-K retrieval,
//! cross-scoring to select the top-N clues, and generation over the fused
//! clue sequence.
//!
//! The crate ships deterministic offline providers for every model-backed
//! step (feature-hashing embedder, lexical cross-scorer, extractive
//! generator) and HTTP clients for remote ones. Loss kernels for the three
//! training objectives are provided for verification, not for training.

pub mod eval;
pub mod generation;
pub mod numerics;
pub mod pipeline;
pub mod ranker;
mod remote;
pub mod retrieval;
pub mod service;
pub mod unirep;

pub use remote::RemoteError;
