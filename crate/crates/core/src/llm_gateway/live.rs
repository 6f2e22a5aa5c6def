use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::{ChatBackend, ChatMessage, ChatRequest, Completion, GatewayError, Usage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_backoff_ms: 500,
            max_backoff_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// `min(base * 2^(attempt-1), max)` for the 1-based attempt that failed.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let exp = attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.base_backoff_ms.saturating_mul(1 << exp).min(self.max_backoff_ms))
    }
}

/// Client for an OpenAI-compatible `/v1/chat/completions` endpoint.
pub struct LiveBackend {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

enum Attempt {
    Done(Completion),
    Retry { message: String, after: Option<Duration> },
    Fatal(GatewayError),
}

impl LiveBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            api_key,
            retry,
        })
    }

    fn attempt(&self, request: &ChatRequest) -> Attempt {
        let started = Instant::now();
        let mut builder = self.client.post(&self.endpoint).json(&WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
        });
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = match builder.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Attempt::Retry {
                    message: e.to_string(),
                    after: None,
                }
            }
            Err(e) => return Attempt::Fatal(GatewayError::Other(e.to_string())),
        };
        let status = response.status();
        if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
            let after = response
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Attempt::Retry {
                message: format!("status {status}"),
                after,
            };
        }
        if !status.is_success() {
            let body = response.text().unwrap_or_default();
            return Attempt::Fatal(GatewayError::Rejected {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: WireResponse = match response.json() {
            Ok(p) => p,
            Err(e) => return Attempt::Fatal(GatewayError::Other(format!("invalid completion body: {e}"))),
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fatal(GatewayError::Other("completion has no choices".into()));
        };
        Attempt::Done(Completion {
            text: choice.message.content.unwrap_or_default(),
            usage: parsed.usage.map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, GatewayError> {
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.attempt(request) {
                Attempt::Done(c) => return Ok(c),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry { message, after } => {
                    if attempt >= self.retry.max_attempts {
                        warn!(attempt, %message, "chat completion retries exhausted");
                        return Err(GatewayError::Transport {
                            attempts: attempt,
                            message,
                        });
                    }
                    let delay = after
                        .map(|d| d.min(Duration::from_millis(self.retry.max_backoff_ms)))
                        .unwrap_or_else(|| self.retry.backoff(attempt));
                    debug!(attempt, %message, delay_ms = delay.as_millis() as u64, "retrying chat completion");
                    std::thread::sleep(delay);
                }
            }
        }
    }

    fn is_live(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_backoff_ms: 100,
            max_backoff_ms: 350,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
        assert_eq!(p.backoff(40), Duration::from_millis(350));
    }
}
