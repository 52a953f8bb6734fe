//! Text-generation backends and the gateway the strategies call through.

mod cassette;
mod http;
mod mock;
pub mod parse;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::{Fingerprint, Prompt};

pub use cassette::{CassetteBackend, CassetteMode, CassetteRecord};
pub use http::{HttpChatBackend, HttpChatConfig, RetryPolicy};
pub use mock::{FnResponder, Responder, ScriptedMock, SyntheticResponder};
pub use parse::{extract_categories, parse_categories, parse_item_list, ParseError};

/// Default model name for the HTTP backend.
pub const DEFAULT_MODEL: &str = "meta-llama/Meta-Llama-3-8B-Instruct";

/// Decoding parameters sent with every request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub max_sequence_length: usize,
    pub presence_penalty: f64,
    pub frequency_penalty: f64,
    pub repetition_penalty: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_k: 40,
            top_p: 0.8,
            max_sequence_length: 4096,
            presence_penalty: 0.02,
            frequency_penalty: 0.02,
            repetition_penalty: 1.02,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        let finite = [self.temperature, self.top_p, self.presence_penalty, self.frequency_penalty, self.repetition_penalty]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.temperature < 0.0 || !(self.top_p > 0.0 && self.top_p <= 1.0) || self.max_sequence_length == 0 {
            return Err(LlmError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt of ~{estimated} tokens exceeds the {limit}-token limit")]
    PromptTooLong { estimated: usize, limit: usize },
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no scripted reply for prompt {template} ({fingerprint})")]
    ScriptMiss { template: String, fingerprint: Fingerprint },
    #[error("cassette has no recording for {template} ({fingerprint}, seed {seed})")]
    CassetteMiss { template: String, fingerprint: Fingerprint, seed: u64 },
    #[error("cassette i/o: {0}")]
    CassetteIo(String),
}

/// A text-generation backend. Implementations must accept concurrent calls.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, prompt: &Prompt, params: &GenerationParams, seed: u64) -> Result<String, LlmError>;
}

/// Rough token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// Wraps a backend with the decoding parameters, prompt-size check,
/// a cap on in-flight calls and a call counter.
pub struct Gateway {
    backend: Box<dyn LlmBackend>,
    params: GenerationParams,
    limit: Option<Semaphore>,
    calls: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Box<dyn LlmBackend>, params: GenerationParams) -> Result<Self, LlmError> {
        params.validate()?;
        Ok(Self { backend, params, limit: None, calls: AtomicU64::new(0) })
    }

    /// Caps the number of concurrent in-flight calls.
    pub fn with_max_in_flight(mut self, permits: usize) -> Self {
        self.limit = Some(Semaphore::new(permits));
        self
    }

    pub fn params(&self) -> &GenerationParams {
        &self.params
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn complete(&self, prompt: &Prompt, seed: u64) -> Result<String, LlmError> {
        if prompt.text.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let estimated = estimate_tokens(&prompt.text);
        if estimated > self.params.max_sequence_length {
            return Err(LlmError::PromptTooLong { estimated, limit: self.params.max_sequence_length });
        }
        let _permit = self.limit.as_ref().map(Semaphore::acquire);
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.backend.complete(prompt, &self.params, seed)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    use super::*;
    use crate::prompts::TemplateName;

    #[test]
    fn default_decoding_parameters() {
        let p = GenerationParams::default();
        assert_eq!(p.temperature, 0.6);
        assert_eq!(p.top_k, 40);
        assert_eq!(p.top_p, 0.8);
        assert_eq!(p.max_sequence_length, 4096);
        assert_eq!(p.presence_penalty, 0.02);
        assert_eq!(p.frequency_penalty, 0.02);
        assert_eq!(p.repetition_penalty, 1.02);
        p.validate().unwrap();
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = GenerationParams { top_p: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GenerationParams { temperature: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GenerationParams { presence_penalty: f64::NAN, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn oversized_and_empty_prompts_rejected() {
        let gw = Gateway::new(Box::new(ScriptedMock::new().with_fallback(FnResponder(|_: &Prompt, _: u64| "x".to_string()))), GenerationParams::default()).unwrap();
        let big = Prompt::raw(TemplateName::Vote, "a".repeat(4 * 4096 + 1));
        assert!(matches!(gw.complete(&big, 0), Err(LlmError::PromptTooLong { .. })));
        assert!(matches!(gw.complete(&Prompt::raw(TemplateName::Vote, "  "), 0), Err(LlmError::EmptyPrompt)));
        assert_eq!(gw.calls(), 0);
        assert_eq!(gw.complete(&Prompt::raw(TemplateName::Vote, "a".repeat(4 * 4096)), 0).unwrap(), "x");
    }

    struct Slow {
        current: Arc<AtomicUsize>,
        peak: Arc<AtomicUsize>,
    }

    impl LlmBackend for Slow {
        fn name(&self) -> &str {
            "slow"
        }
        fn complete(&self, _: &Prompt, _: &GenerationParams, _: u64) -> Result<String, LlmError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(20));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        }
    }

    #[test]
    fn in_flight_cap_enforced() {
        let peak = Arc::new(AtomicUsize::new(0));
        let backend = Slow { current: Arc::new(AtomicUsize::new(0)), peak: peak.clone() };
        let gw = Gateway::new(Box::new(backend), GenerationParams::default()).unwrap().with_max_in_flight(2);
        let p = Prompt::raw(TemplateName::Vote, "hello");
        thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| gw.complete(&p, 0).unwrap());
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.calls(), 8);
    }
}
