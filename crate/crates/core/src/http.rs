//! JSON-over-HTTP POST with exponential backoff, shared by the remote
//! embedding client and the chat-completion backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
            timeout_secs: 120,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

pub struct JsonClient {
    client: reqwest::blocking::Client,
    policy: RetryPolicy,
    api_key: Option<String>,
}

pub struct Reply {
    pub body: Value,
    pub retries: u32,
}

impl JsonClient {
    pub fn new(policy: RetryPolicy, api_key: Option<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(policy.timeout_secs))
            .build()
            .map_err(|e| Error::Http(e.to_string()))?;
        Ok(JsonClient {
            client,
            policy,
            api_key,
        })
    }

    /// POSTs `body`, retrying connection failures, 429 and 5xx responses.
    pub fn post(&self, url: &str, body: &Value) -> Result<Reply> {
        let mut attempt = 0;
        loop {
            let mut req = self.client.post(url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let failure = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let body: Value = resp
                            .json()
                            .map_err(|e| Error::Response(format!("invalid JSON body: {e}")))?;
                        if attempt > 0 {
                            log::info!("{url}: succeeded after {attempt} retries");
                        }
                        return Ok(Reply {
                            body,
                            retries: attempt,
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    let msg = format!("{url}: status {status}: {}", truncate(&text, 200));
                    if !(status.is_server_error() || status.as_u16() == 429) {
                        return Err(Error::Http(msg));
                    }
                    msg
                }
                Err(e) => format!("{url}: {e}"),
            };
            if attempt >= self.policy.max_retries {
                return Err(Error::Http(format!(
                    "{failure} (gave up after {attempt} retries)"
                )));
            }
            log::warn!("{failure}; retry {} of {}", attempt + 1, self.policy.max_retries);
            std::thread::sleep(self.policy.delay(attempt));
            attempt += 1;
        }
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}
