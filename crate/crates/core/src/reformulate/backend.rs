use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::lexicon::GenderLexicon;
use super::prompt::{parse_prompt_items, PromptTarget};
use crate::corpus::GenderForm;

pub const ENV_ENDPOINT: &str = "GSTD_LLM_ENDPOINT";
pub const ENV_KEY: &str = "GSTD_LLM_KEY";
pub const ENV_MODEL: &str = "GSTD_LLM_MODEL";
pub const DEFAULT_MODEL: &str = "gpt-4";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Anything that answers a chat-completion request. Shared across worker
/// threads, so implementations must be `Send + Sync`.
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

/// Deterministic stand-in for a hosted model: reads the numbered inputs of
/// the prompt and swaps lexicon words toward the requested form.
#[derive(Debug, Clone)]
pub struct MockBackend {
    lexicon: GenderLexicon,
}

/// A mock backend over `lexicon`.
pub fn mock_backend(lexicon: GenderLexicon) -> MockBackend {
    MockBackend { lexicon }
}

impl MockBackend {
    pub fn lexicon(&self) -> &GenderLexicon {
        &self.lexicon
    }

    /// Rewrite every lexicon word of `text` toward `target`, keeping spacing,
    /// punctuation and capitalization.
    pub fn rewrite(&self, text: &str, target: GenderForm) -> String {
        rewrite_words(text, |word| {
            self.lexicon.convert(word, target).map(str::to_owned)
        })
    }

    /// The response the mock gives for a prompt, or `None` if the prompt has
    /// no recognizable inputs section.
    pub fn respond(&self, prompt: &str) -> Option<String> {
        let (target, items) = parse_prompt_items(prompt)?;
        let mut out = String::new();
        for (n, text) in items {
            match target {
                PromptTarget::Form(form) => {
                    out.push_str(&format!("{n}. {}\n", self.rewrite(&text, form)))
                }
                PromptTarget::Both => {
                    out.push_str(&format!(
                        "{n}m. {}\n",
                        self.rewrite(&text, GenderForm::Masculine)
                    ));
                    out.push_str(&format!(
                        "{n}f. {}\n",
                        self.rewrite(&text, GenderForm::Feminine)
                    ));
                }
            }
        }
        Some(out)
    }
}

impl ChatBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let prompt = messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .ok_or_else(|| BackendError::Protocol("no user message".into()))?;
        self.respond(&prompt.content)
            .ok_or_else(|| BackendError::Protocol("prompt has no inputs section".into()))
    }
}

/// Apply `replace` to every word run of `text`, copying the case pattern of
/// the original word onto the replacement.
pub fn rewrite_words(text: &str, mut replace: impl FnMut(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let mut flush = |word: &mut String, out: &mut String| {
        if word.is_empty() {
            return;
        }
        match replace(word) {
            Some(new) => out.push_str(&match_case(word, &new)),
            None => out.push_str(word),
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn match_case(original: &str, replacement: &str) -> String {
    let mut chars = original.chars();
    let first_upper = chars.next().is_some_and(char::is_uppercase);
    let all_upper = original.chars().count() > 1 && original.chars().all(|c| !c.is_lowercase());
    if all_upper {
        replacement.to_uppercase()
    } else if first_upper {
        let mut rc = replacement.chars();
        rc.next()
            .map(|c| c.to_uppercase().chain(rc).collect())
            .unwrap_or_default()
    } else {
        replacement.to_owned()
    }
}

/// Chat-completion client for an HTTP JSON endpoint:
/// request `{model, messages, temperature}`, response `{choices:[{message:{content}}]}`.
pub struct HttpBackend {
    endpoint: String,
    key: Option<String>,
    model: String,
    temperature: f64,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, key: Option<String>, model: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            key,
            model: model.into(),
            temperature: 0.0,
            agent,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    /// Configure from `GSTD_LLM_ENDPOINT` (required), `GSTD_LLM_KEY` and
    /// `GSTD_LLM_MODEL` (default `gpt-4`).
    pub fn from_env() -> Result<Self, BackendError> {
        Self::from_lookup(|name| std::env::var(name).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, BackendError> {
        let endpoint = lookup(ENV_ENDPOINT)
            .filter(|s| !s.trim().is_empty())
            .ok_or(BackendError::MissingEnv(ENV_ENDPOINT))?;
        let key = lookup(ENV_KEY).filter(|s| !s.is_empty());
        let model = lookup(ENV_MODEL)
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| DEFAULT_MODEL.to_owned());
        Ok(Self::new(endpoint, key, model))
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// JSON body of a request.
    pub fn request_body(&self, messages: &[ChatMessage]) -> String {
        serde_json::json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        })
        .to_string()
    }
}

/// Extract `choices[0].message.content` from a chat-completion response body.
pub fn parse_chat_response(body: &str) -> Result<String, BackendError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| BackendError::Protocol("no choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let mut request = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send(self.request_body(messages))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        parse_chat_response(&body)
    }
}

/// Token bucket limiting request starts to `per_minute`, with bursts of up
/// to `burst` requests.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    burst: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(per_minute: f64, burst: usize) -> Self {
        assert!(per_minute > 0.0, "rate must be positive");
        let burst = burst.max(1) as f64;
        Self {
            per_second: per_minute / 60.0,
            burst,
            state: Mutex::new((burst, Instant::now())),
        }
    }

    /// Block until a token is available, then take it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let (tokens, last) = &mut *state;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.per_second)
                    .min(self.burst);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                (1.0 - *tokens) / self.per_second
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Lang;
    use crate::reformulate::prompt::build_prompt;
    use crate::reformulate::PromptStrategy;

    fn lex() -> GenderLexicon {
        GenderLexicon::new([("profesor", "profesora"), ("cansado", "cansada")])
    }

    #[test]
    fn mock_applies_lexicon_in_requested_direction() {
        let mock = mock_backend(lex());
        assert_eq!(
            mock.rewrite("soy profesor", GenderForm::Feminine),
            "soy profesora"
        );
        assert_eq!(
            mock.rewrite("soy profesor", GenderForm::Masculine),
            "soy profesor"
        );
        assert_eq!(
            mock.rewrite("Profesora, ¿estás CANSADA?", GenderForm::Masculine),
            "Profesor, ¿estás CANSADO?"
        );
        assert_eq!(mock.rewrite("hace frío", GenderForm::Feminine), "hace frío");
    }

    #[test]
    fn mock_answers_prompts_deterministically() {
        let mock = mock_backend(lex());
        let prompt = build_prompt(
            &[(1, "soy profesor"), (2, "hace frío")],
            Lang::Es,
            GenderForm::Feminine,
            PromptStrategy::ZeroShot,
            &[],
        )
        .unwrap();
        let msgs = [ChatMessage::user(prompt)];
        let a = mock.complete(&msgs).unwrap();
        assert_eq!(a, "1. soy profesora\n2. hace frío\n");
        assert_eq!(mock.complete(&msgs).unwrap(), a);
        assert!(mock.complete(&[ChatMessage::user("hello")]).is_err());
    }

    #[test]
    fn env_configuration() {
        let err = HttpBackend::from_lookup(|_| None).err().unwrap();
        assert_eq!(err, BackendError::MissingEnv(ENV_ENDPOINT));
        assert!(err.to_string().contains("GSTD_LLM_ENDPOINT"));
        let backend = HttpBackend::from_lookup(|name| match name {
            ENV_ENDPOINT => Some("http://localhost:1/v1/chat/completions".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(backend.model(), DEFAULT_MODEL);
        let body: Value =
            serde_json::from_str(&backend.request_body(&[ChatMessage::user("hi")])).unwrap();
        assert_eq!(body["model"], "gpt-4");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hi");
    }

    #[test]
    fn chat_response_parsing() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"1. hola"}}]}"#;
        assert_eq!(parse_chat_response(ok).unwrap(), "1. hola");
        assert!(matches!(
            parse_chat_response("{}"),
            Err(BackendError::Protocol(_))
        ));
        assert!(matches!(
            parse_chat_response("nope"),
            Err(BackendError::Protocol(_))
        ));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(600.0, 1); // 10 per second
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        // The first token is free, the next three take ~0.1 s each.
        assert!(
            start.elapsed() >= Duration::from_millis(280),
            "{:?}",
            start.elapsed()
        );
    }
}
