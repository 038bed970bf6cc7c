//! Desk-scale chain-of-thought speech recognition.
//!
//! A self-contained speech-to-text model that generates a contextual
//! reasoning block followed by a transcript in one autoregressive pass. The
//! speech prompt comes from a CTC-guided modality adapter that maps encoder
//! frames into the language model's embedding space; training optimizes a
//! joint CE + CTC objective on synthetic speech, and evaluation covers WER,
//! entity error rate, and biased/unbiased WER.

pub mod adapter;
pub mod ctc;
pub mod error;
pub mod layers;
pub mod numerics;

pub use error::{Error, Result};
