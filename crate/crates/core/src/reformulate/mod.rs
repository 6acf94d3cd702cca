//! LLM-based gender reformulation of translations.
//!
//! Prompts ask a chat model to rewrite only the speaker-referential
//! gender-marked words of each translation. Requests go out in numbered
//! batches through a [`ChatBackend`]; the answers are matched back by number
//! and every rewrite is checked by the [`Validator`] before use.

mod backend;
mod batch;
mod lexicon;
mod prompt;
mod validate;

use thiserror::Error;

pub use backend::{
    mock_backend, parse_chat_response, rewrite_words, BackendError, ChatBackend, ChatMessage,
    HttpBackend, MockBackend, RateLimiter, DEFAULT_MODEL, ENV_ENDPOINT, ENV_KEY, ENV_MODEL,
};
pub use batch::{
    reformulate_batch, sha256_ref, BatchOutcome, ChunkFailure, ReformulateOptions,
    ReformulationResult, RequestMode,
};
pub use lexicon::{GenderLexicon, MorphPattern};
pub use prompt::{
    build_prompt, build_prompt_for, builtin_exemplars, parse_both_response, parse_prompt_items,
    parse_single_response, Exemplar, PromptStrategy, PromptTarget, DEFAULT_SHOTS, PROMPT_VERSION,
};
pub use validate::{validate_reformulation, FlaggedEdit, Validator, Verdict};

#[derive(Debug, Error)]
pub enum ReformulateError {
    #[error("{strategy} needs {needed} exemplars, only {available} supplied")]
    InsufficientExemplars {
        strategy: PromptStrategy,
        needed: usize,
        available: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}
