//! Toolkit for removing speaker-gender bias from speech-translation
//! fine-tuning data and for measuring gendered-translation accuracy.
//!
//! - [`corpus`]: data model, JSONL/TSV ingestion and serialization.
//! - [`selection`]: first-person filtering, balanced sampling, neutral-data
//!   mixing and 1-mode / 3-mode target construction.
//! - [`reformulate`]: prompt construction, batched chat-completion requests,
//!   response parsing and rewrite validation.
//! - [`metrics`]: term-level gender accuracy, coverage and corpus BLEU.
//! - [`genderloss`]: the frame-level gender classification loss, its
//!   gradients, a transducer-loss stand-in and a toy training harness.

pub mod corpus;
pub mod genderloss;
pub mod metrics;
pub mod reformulate;
pub mod selection;
pub mod text;
