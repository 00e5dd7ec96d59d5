//! Downstream ASR heads over ensembles of frozen speech-model embeddings.
//!
//! Per-frame features from several upstream models are aligned, combined
//! (concatenation, sum, weighted average or attention mixing), projected and
//! fed to an optional transformer encoder stack, then a linear CTC layer. The
//! crate trains that head with Adam, decodes greedily and scores WER/CER.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod combiners;
pub mod ctc;
pub mod error;
pub mod eval;
pub mod feature_store;
pub mod head;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
