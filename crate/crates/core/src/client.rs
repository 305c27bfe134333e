//! Chat-completions client: JSON wire format, retry with exponential
//! backoff, bounded in-flight requests, token-usage budget tracking, and
//! a scriptable mock transport so tests and simulations never touch the
//! network.

use crate::prompting::ChatMessage;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl CompletionRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 1.0,
            max_tokens: None,
        }
    }

    /// Stable wire payload: identical requests serialize byte-identically.
    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("request serialization cannot fail")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResponse {
    pub content: String,
    pub finish_reason: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone)]
pub struct TransportPolicy {
    pub max_in_flight: usize,
    pub retry_max: u32,
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl Default for TransportPolicy {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            retry_max: 3,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited, retries exhausted after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("request timed out")]
    Timeout,
    #[error("token budget exceeded: spent {spent}, budget {budget}")]
    BudgetExceeded { spent: u64, budget: u64 },
    #[error("transport error: {0}")]
    Transport(String),
}

/// One transport attempt outcome, before retry handling.
#[derive(Debug, Clone)]
pub enum AttemptError {
    /// Retriable: HTTP 429/5xx or a timeout.
    Transient(String),
    Auth(String),
    Protocol(String),
}

/// Pluggable request executor. One call is one attempt; the client owns
/// retries, backoff, and the in-flight bound.
pub trait Transport: Send + Sync {
    fn execute(&self, request: &CompletionRequest) -> Result<CompletionResponse, AttemptError>;
}

/// Counting semaphore over std primitives.
struct InFlightGate {
    permits: Mutex<usize>,
    cv: Condvar,
    /// High-water mark of concurrently held permits, for tests.
    peak: Mutex<usize>,
    max: usize,
}

impl InFlightGate {
    fn new(max: usize) -> Self {
        Self {
            permits: Mutex::new(max),
            cv: Condvar::new(),
            peak: Mutex::new(0),
            max,
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cv.wait(permits).unwrap();
        }
        *permits -= 1;
        let held = self.max - *permits;
        let mut peak = self.peak.lock().unwrap();
        if held > *peak {
            *peak = held;
        }
    }

    fn release(&self) {
        let mut permits = self.permits.lock().unwrap();
        *permits += 1;
        self.cv.notify_one();
    }
}

/// Chat-completions client over a transport, with retry policy and an
/// optional hard token budget.
pub struct ChatClient<T: Transport> {
    transport: T,
    policy: TransportPolicy,
    gate: InFlightGate,
    tokens_spent: AtomicU64,
    token_budget: Option<u64>,
    sleep_on_backoff: bool,
}

impl<T: Transport> ChatClient<T> {
    pub fn new(transport: T, policy: TransportPolicy) -> Self {
        assert!(policy.max_in_flight >= 1);
        let gate = InFlightGate::new(policy.max_in_flight);
        Self {
            transport,
            policy,
            gate,
            tokens_spent: AtomicU64::new(0),
            token_budget: None,
            sleep_on_backoff: true,
        }
    }

    pub fn with_budget(mut self, budget: Option<u64>) -> Self {
        self.token_budget = budget;
        self
    }

    /// Disable backoff sleeps; failure-injection tests use this.
    pub fn without_backoff_sleep(mut self) -> Self {
        self.sleep_on_backoff = false;
        self
    }

    pub fn tokens_spent(&self) -> u64 {
        self.tokens_spent.load(Ordering::Relaxed)
    }

    /// Peak number of simultaneously in-flight requests so far.
    pub fn peak_in_flight(&self) -> usize {
        *self.gate.peak.lock().unwrap()
    }

    /// Execute one completion, retrying transient failures with
    /// exponential backoff up to `retry_max` extra attempts.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        if let Some(budget) = self.token_budget {
            let spent = self.tokens_spent();
            if spent >= budget {
                return Err(ClientError::BudgetExceeded { spent, budget });
            }
        }
        self.gate.acquire();
        let result = self.complete_inner(request);
        self.gate.release();
        if let Ok(resp) = &result {
            self.tokens_spent
                .fetch_add(resp.usage.total(), Ordering::Relaxed);
        }
        result
    }

    fn complete_inner(&self, request: &CompletionRequest) -> Result<CompletionResponse, ClientError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.transport.execute(request) {
                Ok(resp) => return Ok(resp),
                Err(AttemptError::Auth(msg)) => return Err(ClientError::Auth(msg)),
                Err(AttemptError::Protocol(msg)) => return Err(ClientError::Protocol(msg)),
                Err(AttemptError::Transient(_)) => {
                    if attempts > self.policy.retry_max {
                        return Err(ClientError::RateLimited { attempts });
                    }
                    if self.sleep_on_backoff {
                        let backoff = self.policy.backoff_base * 2u32.pow(attempts - 1);
                        std::thread::sleep(backoff);
                    }
                }
            }
        }
    }

    /// Translate text via a fresh single-turn conversation. Empty input
    /// short-circuits without a call; survey conversation state is never
    /// reused here.
    pub fn translate(
        &self,
        text: &str,
        target_language: &crate::design::Language,
        model: &str,
    ) -> Result<String, ClientError> {
        if text.is_empty() {
            return Ok(String::new());
        }
        let prompt = format!(
            "Translate the following text into {}. Preserve any placeholders in curly braces \
exactly as written. Reply with the translation only.\n\n{text}",
            target_language.display_name
        );
        let request = CompletionRequest::new(model, vec![ChatMessage::user(prompt)]);
        Ok(self.complete(&request)?.content)
    }
}

/// Live HTTPS transport speaking the chat-completions JSON schema.
/// Credentials come from the environment only.
pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl HttpTransport {
    pub const API_KEY_ENV: &'static str = "CHAT_API_KEY";

    pub fn from_env(endpoint: impl Into<String>, timeout: Duration) -> Result<Self, ClientError> {
        let api_key = std::env::var(Self::API_KEY_ENV)
            .map_err(|_| ClientError::Auth(format!("{} not set", Self::API_KEY_ENV)))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            api_key,
            http,
        })
    }
}

impl Transport for HttpTransport {
    fn execute(&self, request: &CompletionRequest) -> Result<CompletionResponse, AttemptError> {
        let response = self
            .http
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .header("content-type", "application/json")
            .body(request.to_wire())
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    AttemptError::Transient("timeout".into())
                } else {
                    AttemptError::Transient(e.to_string())
                }
            })?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(AttemptError::Auth(format!("http {status}")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Transient(format!("http {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Protocol(format!("http {status}")));
        }
        let body: serde_json::Value = response
            .json()
            .map_err(|e| AttemptError::Protocol(e.to_string()))?;
        parse_completion_body(&body)
    }
}

fn parse_completion_body(body: &serde_json::Value) -> Result<CompletionResponse, AttemptError> {
    let first_choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| AttemptError::Protocol("missing choices[0]".into()))?;
    let content = first_choice
        .pointer("/message/content")
        .and_then(|v| v.as_str())
        .ok_or_else(|| AttemptError::Protocol("missing message content".into()))?
        .to_string();
    let finish_reason = first_choice
        .get("finish_reason")
        .and_then(|v| v.as_str())
        .unwrap_or("stop")
        .to_string();
    let usage = TokenUsage {
        input_tokens: body
            .pointer("/usage/prompt_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or(0),
        output_tokens: body
            .pointer("/usage/completion_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or(0),
    };
    Ok(CompletionResponse {
        content,
        finish_reason,
        usage,
    })
}

/// Scriptable mock transport: fixed replies, reply-by-pattern, and
/// failure injection.
pub struct MockTransport {
    script: Mutex<MockScript>,
    calls: AtomicU64,
    active: AtomicU64,
    peak_active: AtomicU64,
}

struct MockScript {
    /// Failures consumed before any reply is produced.
    failures: Vec<AttemptError>,
    /// (needle in last user message, reply) pairs, first match wins.
    patterns: Vec<(String, String)>,
    default_reply: String,
    usage_per_call: TokenUsage,
}

impl MockTransport {
    pub fn echo(reply: impl Into<String>) -> Self {
        Self {
            script: Mutex::new(MockScript {
                failures: Vec::new(),
                patterns: Vec::new(),
                default_reply: reply.into(),
                usage_per_call: TokenUsage {
                    input_tokens: 10,
                    output_tokens: 2,
                },
            }),
            calls: AtomicU64::new(0),
            active: AtomicU64::new(0),
            peak_active: AtomicU64::new(0),
        }
    }

    pub fn with_pattern(self, needle: impl Into<String>, reply: impl Into<String>) -> Self {
        self.script
            .lock()
            .unwrap()
            .patterns
            .push((needle.into(), reply.into()));
        self
    }

    pub fn with_failures(self, failures: Vec<AttemptError>) -> Self {
        self.script.lock().unwrap().failures = failures;
        self
    }

    pub fn with_usage(self, usage: TokenUsage) -> Self {
        self.script.lock().unwrap().usage_per_call = usage;
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_concurrency(&self) -> u64 {
        self.peak_active.load(Ordering::SeqCst)
    }
}

impl Transport for MockTransport {
    fn execute(&self, request: &CompletionRequest) -> Result<CompletionResponse, AttemptError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now_active = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_active.fetch_max(now_active, Ordering::SeqCst);
        // Hold the slot briefly so concurrency is observable.
        std::thread::sleep(Duration::from_millis(2));
        let result = {
            let mut script = self.script.lock().unwrap();
            if !script.failures.is_empty() {
                Err(script.failures.remove(0))
            } else {
                let last_user = request
                    .messages
                    .iter()
                    .rev()
                    .find(|m| m.role == crate::prompting::Role::User)
                    .map(|m| m.content.as_str())
                    .unwrap_or("");
                let reply = script
                    .patterns
                    .iter()
                    .find(|(needle, _)| last_user.contains(needle.as_str()))
                    .map(|(_, reply)| reply.clone())
                    .unwrap_or_else(|| script.default_reply.clone());
                Ok(CompletionResponse {
                    content: reply,
                    finish_reason: "stop".into(),
                    usage: script.usage_per_call,
                })
            }
        };
        self.active.fetch_sub(1, Ordering::SeqCst);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::ChatMessage;

    fn request() -> CompletionRequest {
        CompletionRequest::new("test-model", vec![ChatMessage::user("pick one")])
    }

    #[test]
    fn mock_echo_returns_content() {
        let client = ChatClient::new(MockTransport::echo("(1)"), TransportPolicy::default());
        let resp = client.complete(&request()).unwrap();
        assert_eq!(resp.content, "(1)");
    }

    #[test]
    fn retries_transient_failures_then_succeeds() {
        let transport = MockTransport::echo("(2)").with_failures(vec![
            AttemptError::Transient("http 429".into()),
            AttemptError::Transient("http 503".into()),
        ]);
        let policy = TransportPolicy {
            retry_max: 3,
            ..Default::default()
        };
        let client = ChatClient::new(transport, policy).without_backoff_sleep();
        let resp = client.complete(&request()).unwrap();
        assert_eq!(resp.content, "(2)");
        // Two failures plus the success.
        assert_eq!(client.transport.calls(), 3);
    }

    #[test]
    fn exhausted_retries_surface_rate_limited() {
        let transport = MockTransport::echo("(1)").with_failures(vec![
            AttemptError::Transient("x".into()),
            AttemptError::Transient("x".into()),
            AttemptError::Transient("x".into()),
            AttemptError::Transient("x".into()),
        ]);
        let policy = TransportPolicy {
            retry_max: 2,
            ..Default::default()
        };
        let client = ChatClient::new(transport, policy).without_backoff_sleep();
        match client.complete(&request()) {
            Err(ClientError::RateLimited { attempts }) => assert_eq!(attempts, 3),
            other => panic!("expected RateLimited, got {other:?}"),
        }
    }

    #[test]
    fn auth_errors_do_not_retry() {
        let transport =
            MockTransport::echo("(1)").with_failures(vec![AttemptError::Auth("bad key".into())]);
        let client =
            ChatClient::new(transport, TransportPolicy::default()).without_backoff_sleep();
        assert!(matches!(client.complete(&request()), Err(ClientError::Auth(_))));
        assert_eq!(client.transport.calls(), 1);
    }

    #[test]
    fn in_flight_bound_is_enforced() {
        let policy = TransportPolicy {
            max_in_flight: 2,
            ..Default::default()
        };
        let client =
            std::sync::Arc::new(ChatClient::new(MockTransport::echo("(1)"), policy));
        std::thread::scope(|scope| {
            for _ in 0..8 {
                let client = client.clone();
                scope.spawn(move || {
                    client.complete(&request()).unwrap();
                });
            }
        });
        assert!(client.transport.peak_concurrency() <= 2);
        assert_eq!(client.transport.calls(), 8);
    }

    #[test]
    fn wire_serialization_is_stable_and_schema_shaped() {
        let a = request().to_wire();
        let b = request().to_wire();
        assert_eq!(a, b);
        let value: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(value["model"], "test-model");
        assert_eq!(value["temperature"], 1.0);
        assert_eq!(value["messages"][0]["role"], "user");
        assert!(value.get("max_tokens").is_none());
    }

    #[test]
    fn budget_aborts_cleanly() {
        let transport = MockTransport::echo("(1)").with_usage(TokenUsage {
            input_tokens: 60,
            output_tokens: 40,
        });
        let client = ChatClient::new(transport, TransportPolicy::default())
            .with_budget(Some(150))
            .without_backoff_sleep();
        client.complete(&request()).unwrap();
        client.complete(&request()).unwrap();
        assert_eq!(client.tokens_spent(), 200);
        assert!(matches!(
            client.complete(&request()),
            Err(ClientError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn translate_short_circuits_empty_and_uses_fresh_conversation() {
        let registry = crate::design::language_registry();
        let german = crate::design::find_language(&registry, "german").unwrap();
        let transport = MockTransport::echo("Beide Optionen");
        let client = ChatClient::new(transport, TransportPolicy::default());
        assert_eq!(client.translate("", &german, "m").unwrap(), "");
        assert_eq!(client.transport.calls(), 0);
        let out = client.translate("Both options", &german, "m").unwrap();
        assert_eq!(out, "Beide Optionen");
        assert_eq!(client.transport.calls(), 1);
    }

    #[test]
    fn completion_body_parsing() {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": "(2)"}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        });
        let resp = parse_completion_body(&body).unwrap();
        assert_eq!(resp.content, "(2)");
        assert_eq!(resp.usage.total(), 15);
        let bad = serde_json::json!({"choices": []});
        assert!(matches!(
            parse_completion_body(&bad),
            Err(AttemptError::Protocol(_))
        ));
    }
}
