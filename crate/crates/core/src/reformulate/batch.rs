use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{ChatBackend, ChatMessage, RateLimiter};
use super::prompt::{
    build_prompt_for, parse_both_response, parse_single_response, Exemplar, PromptStrategy,
    PromptTarget,
};
use super::ReformulateError;
use crate::corpus::{GenderForm, Lang, Utterance};

/// Masculine and feminine versions of one translation, with audit hashes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulationResult {
    pub utterance_id: String,
    pub masculine: String,
    pub feminine: String,
    /// `sha256:<hex>` of the raw response(s) the forms were parsed from.
    pub raw_response_ref: String,
    /// `sha256:<hex>` of the prompt(s) sent.
    pub prompt_ref: String,
    pub backend: String,
}

/// A chunk that could not be reformulated after all attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkFailure {
    pub chunk: usize,
    pub utterance_ids: Vec<String>,
    pub attempts: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestMode {
    /// One request per chunk returning both forms.
    #[default]
    BothForms,
    /// One request per chunk and form.
    PerForm,
}

#[derive(Debug, Clone)]
pub struct ReformulateOptions {
    pub strategy: PromptStrategy,
    pub exemplars: Vec<Exemplar>,
    pub batch_size: usize,
    /// Extra attempts after the first one, per request.
    pub retries: usize,
    pub request_mode: RequestMode,
    pub max_in_flight: usize,
    pub requests_per_minute: Option<f64>,
}

impl Default for ReformulateOptions {
    fn default() -> Self {
        Self {
            strategy: PromptStrategy::default(),
            exemplars: Vec::new(),
            batch_size: 20,
            retries: 2,
            request_mode: RequestMode::BothForms,
            max_in_flight: 4,
            requests_per_minute: None,
        }
    }
}

/// Results and failures, both in input order.
#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    pub results: Vec<ReformulationResult>,
    pub failures: Vec<ChunkFailure>,
    /// Number of backend calls made, retries included.
    pub requests: usize,
}

pub fn sha256_ref(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

struct Exchange<T> {
    parsed: T,
    prompt_ref: String,
    response_ref: String,
}

enum ChunkOutcome {
    Done(Vec<ReformulationResult>, usize),
    Failed(ChunkFailure, usize),
}

/// Send one prompt, retrying transport and parse failures.
fn exchange<T>(
    backend: &dyn ChatBackend,
    limiter: Option<&RateLimiter>,
    prompt: &str,
    attempts: usize,
    calls: &mut usize,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Exchange<T>, (usize, String)> {
    let messages = [ChatMessage::user(prompt)];
    let mut last_error = String::new();
    for _ in 0..attempts {
        if let Some(limiter) = limiter {
            limiter.acquire();
        }
        *calls += 1;
        match backend.complete(&messages) {
            Err(e) => last_error = e.to_string(),
            Ok(response) => match parse(&response) {
                Some(parsed) => {
                    return Ok(Exchange {
                        parsed,
                        prompt_ref: sha256_ref(prompt),
                        response_ref: sha256_ref(&response),
                    })
                }
                None => {
                    last_error =
                        "response does not contain exactly the expected numbered lines".into()
                }
            },
        }
    }
    Err((attempts, last_error))
}

fn run_chunk(
    chunk_idx: usize,
    chunk: &[Utterance],
    lang: Lang,
    backend: &dyn ChatBackend,
    limiter: Option<&RateLimiter>,
    opts: &ReformulateOptions,
) -> ChunkOutcome {
    let numbered: Vec<(usize, &str)> = chunk
        .iter()
        .enumerate()
        .map(|(i, u)| (i + 1, u.translation.as_str()))
        .collect();
    let expected: Vec<usize> = (1..=chunk.len()).collect();
    let attempts = opts.retries + 1;
    let mut calls = 0;
    let fail = |calls, (attempts, reason): (usize, String)| {
        ChunkOutcome::Failed(
            ChunkFailure {
                chunk: chunk_idx,
                utterance_ids: chunk.iter().map(|u| u.id.clone()).collect(),
                attempts,
                reason,
            },
            calls,
        )
    };
    let prompt = |target| {
        build_prompt_for(&numbered, lang, target, opts.strategy, &opts.exemplars)
            .expect("prompt inputs validated before dispatch")
    };

    let (pairs, prompt_ref, response_ref) = match opts.request_mode {
        RequestMode::BothForms => {
            let p = prompt(PromptTarget::Both);
            match exchange(backend, limiter, &p, attempts, &mut calls, |r| {
                parse_both_response(r, &expected)
            }) {
                Ok(ex) => (ex.parsed, ex.prompt_ref, ex.response_ref),
                Err(e) => return fail(calls, e),
            }
        }
        RequestMode::PerForm => {
            let mut forms = Vec::with_capacity(2);
            for form in [GenderForm::Masculine, GenderForm::Feminine] {
                let p = prompt(PromptTarget::Form(form));
                match exchange(backend, limiter, &p, attempts, &mut calls, |r| {
                    parse_single_response(r, &expected)
                }) {
                    Ok(ex) => forms.push(ex),
                    Err(e) => return fail(calls, e),
                }
            }
            let fem = forms.pop().expect("two forms");
            let masc = forms.pop().expect("two forms");
            (
                masc.parsed.into_iter().zip(fem.parsed).collect(),
                format!("{},{}", masc.prompt_ref, fem.prompt_ref),
                format!("{},{}", masc.response_ref, fem.response_ref),
            )
        }
    };
    let results = chunk
        .iter()
        .zip(pairs)
        .map(|(utt, (masculine, feminine))| ReformulationResult {
            utterance_id: utt.id.clone(),
            masculine,
            feminine,
            raw_response_ref: response_ref.clone(),
            prompt_ref: prompt_ref.clone(),
            backend: backend.name().to_owned(),
        })
        .collect();
    ChunkOutcome::Done(results, calls)
}

/// Reformulate `batch` into masculine and feminine versions.
///
/// The batch is cut into chunks of at most `batch_size` items that run on up
/// to `max_in_flight` worker threads. Each request is retried up to `retries`
/// times with identical content; a chunk that still fails is reported in
/// [`BatchOutcome::failures`]. Results come back in input order.
pub fn reformulate_batch(
    batch: &[Utterance],
    lang: Lang,
    backend: &dyn ChatBackend,
    opts: &ReformulateOptions,
) -> Result<BatchOutcome, ReformulateError> {
    if opts.batch_size == 0 {
        return Err(ReformulateError::InvalidInput(
            "batch_size must be at least 1".into(),
        ));
    }
    if let Some(u) = batch.iter().find(|u| u.lang != lang) {
        return Err(ReformulateError::InvalidInput(format!(
            "utterance '{}' is {} but the batch language is {lang}",
            u.id, u.lang
        )));
    }
    if batch.is_empty() {
        return Ok(BatchOutcome::default());
    }
    // Surface prompt errors (exemplars etc.) before any request goes out.
    build_prompt_for(
        &[(1, "x")],
        lang,
        PromptTarget::Both,
        opts.strategy,
        &opts.exemplars,
    )?;

    let limiter = opts
        .requests_per_minute
        .map(|rpm| RateLimiter::new(rpm, opts.max_in_flight.max(1)));
    let chunks: Vec<&[Utterance]> = batch.chunks(opts.batch_size).collect();
    let workers = opts.max_in_flight.clamp(1, chunks.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();

    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, chunks, limiter) = (&next, &chunks, limiter.as_ref());
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(chunk) = chunks.get(idx) else { break };
                let outcome = run_chunk(idx, chunk, lang, backend, limiter, opts);
                if tx.send((idx, outcome)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);

    let mut outcomes: Vec<(usize, ChunkOutcome)> = rx.into_iter().collect();
    outcomes.sort_by_key(|(idx, _)| *idx);
    let mut out = BatchOutcome::default();
    for (_, outcome) in outcomes {
        match outcome {
            ChunkOutcome::Done(results, calls) => {
                out.results.extend(results);
                out.requests += calls;
            }
            ChunkOutcome::Failed(failure, calls) => {
                out.failures.push(failure);
                out.requests += calls;
            }
        }
    }
    Ok(out)
}
