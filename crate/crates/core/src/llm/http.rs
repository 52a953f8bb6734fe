//! OpenAI-compatible chat-completions backend.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GenerationParams, LlmBackend, LlmError, DEFAULT_MODEL};
use crate::prompts::Prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, initial_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based): doubles each time, capped.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpChatConfig {
    /// Full chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub token: Option<String>,
    /// Send `top_k` and `repetition_penalty` as extra body fields. Servers
    /// such as vLLM accept them; strict OpenAI endpoints reject unknown fields.
    pub vendor_sampling_fields: bool,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: DEFAULT_MODEL.into(),
            token: None,
            vendor_sampling_fields: true,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpChatBackend {
    config: HttpChatConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Transient(String),
}

impl HttpChatBackend {
    pub fn new(config: HttpChatConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn request_body(&self, prompt: &Prompt, params: &GenerationParams, seed: u64) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": prompt.text }],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "presence_penalty": params.presence_penalty,
            "frequency_penalty": params.frequency_penalty,
            "seed": seed,
            "stream": false,
        });
        if self.config.vendor_sampling_fields {
            body["top_k"] = json!(params.top_k);
            body["repetition_penalty"] = json!(params.repetition_penalty);
        }
        body
    }

    fn attempt(&self, body: &str) -> Result<Attempt, LlmError> {
        let mut req = self.agent.post(&self.config.endpoint).header("Content-Type", "application/json");
        if let Some(token) = &self.config.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let resp = match req.send(body) {
            Ok(r) => r,
            Err(e @ (ureq::Error::BadUri(_) | ureq::Error::Http(_) | ureq::Error::InvalidProxyUrl)) => {
                return Err(LlmError::Transport { attempts: 1, message: e.to_string() })
            }
            Err(e) => return Ok(Attempt::Transient(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = resp.into_body().read_to_string().map_err(|e| LlmError::Malformed(e.to_string()));
        if status == 429 || status >= 500 {
            return Ok(Attempt::Transient(format!("HTTP {status}")));
        }
        let text = text?;
        if status >= 400 {
            return Err(LlmError::Status { status, body: text });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(|s| Attempt::Done(s.to_string()))
            .ok_or_else(|| LlmError::Malformed(format!("no choices[0].message.content in {text}")))
    }
}

impl LlmBackend for HttpChatBackend {
    fn name(&self) -> &str {
        "http-chat"
    }

    fn complete(&self, prompt: &Prompt, params: &GenerationParams, seed: u64) -> Result<String, LlmError> {
        let body = self.request_body(prompt, params, seed).to_string();
        let retry = &self.config.retry;
        let mut last = String::new();
        for attempt in 0..=retry.max_retries {
            if attempt > 0 {
                let d = retry.delay(attempt - 1);
                log::warn!("retrying chat completion in {d:?} after: {last}");
                thread::sleep(d);
            }
            match self.attempt(&body)? {
                Attempt::Done(reply) => return Ok(reply),
                Attempt::Transient(msg) => last = msg,
            }
        }
        Err(LlmError::Transport { attempts: retry.max_retries + 1, message: last })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    use super::*;
    use crate::prompts::TemplateName;

    /// Serves the scripted `(status, body)` responses in order, one per
    /// connection, and records request bodies.
    fn stub_server(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        (url, seen)
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn backend(url: String) -> HttpChatBackend {
        HttpChatBackend::new(HttpChatConfig {
            endpoint: url,
            token: Some("secret".into()),
            retry: RetryPolicy { max_retries: 3, initial_delay_ms: 1, max_delay_ms: 4 },
            timeout_secs: 5,
            ..Default::default()
        })
    }

    #[test]
    fn succeeds_after_two_503s() {
        let (url, seen) = stub_server(vec![(503, "{}".into()), (503, "{}".into()), (200, ok_body("1. X\n2. Y"))]);
        let b = backend(url);
        let prompt = Prompt::raw(TemplateName::Vote, "pick");
        let reply = b.complete(&prompt, &GenerationParams::default(), 9).unwrap();
        assert_eq!(reply, "1. X\n2. Y");
        let bodies = seen.lock().unwrap();
        assert_eq!(bodies.len(), 3);
        let sent: Value = serde_json::from_str(&bodies[2]).unwrap();
        assert_eq!(sent["model"], DEFAULT_MODEL);
        assert_eq!(sent["temperature"], 0.6);
        assert_eq!(sent["top_p"], 0.8);
        assert_eq!(sent["top_k"], 40);
        assert_eq!(sent["seed"], 9);
        assert_eq!(sent["messages"][0]["content"], "pick");
    }

    #[test]
    fn gives_up_after_retries() {
        let (url, seen) = stub_server(vec![(500, "{}".into()); 4]);
        let err = backend(url).complete(&Prompt::raw(TemplateName::Vote, "p"), &GenerationParams::default(), 0).unwrap_err();
        assert!(matches!(err, LlmError::Transport { attempts: 4, .. }));
        assert_eq!(seen.lock().unwrap().len(), 4);
    }

    #[test]
    fn client_errors_not_retried() {
        let (url, seen) = stub_server(vec![(401, r#"{"error":"bad token"}"#.into())]);
        let err = backend(url).complete(&Prompt::raw(TemplateName::Vote, "p"), &GenerationParams::default(), 0).unwrap_err();
        assert!(matches!(err, LlmError::Status { status: 401, .. }));
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn vendor_fields_optional() {
        let b = HttpChatBackend::new(HttpChatConfig { vendor_sampling_fields: false, ..Default::default() });
        let body = b.request_body(&Prompt::raw(TemplateName::Vote, "p"), &GenerationParams::default(), 1);
        assert!(body.get("top_k").is_none());
        assert!(body.get("repetition_penalty").is_none());
    }

    #[test]
    fn backoff_is_capped() {
        let r = RetryPolicy { max_retries: 10, initial_delay_ms: 100, max_delay_ms: 1000 };
        assert_eq!(r.delay(0), Duration::from_millis(100));
        assert_eq!(r.delay(2), Duration::from_millis(400));
        assert_eq!(r.delay(5), Duration::from_millis(1000));
        assert_eq!(r.delay(70), Duration::from_millis(1000));
    }
}
