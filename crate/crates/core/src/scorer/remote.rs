use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{MaskPrediction, ScoreError, Scorer, TokenScore};
use crate::templates::{ProbeText, MASK};

pub const API_TOKEN_ENV: &str = "BIASPROBE_API_TOKEN";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): `base * 2^(attempt-1)`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

#[derive(Serialize)]
struct FillMaskRequest<'a> {
    inputs: &'a str,
}

#[derive(Deserialize)]
struct Candidate {
    token_str: String,
    score: f64,
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Client for a hosted fill-mask endpoint.
///
/// Sends `POST <url>` with `{"inputs": "<text>"}` and expects a JSON array of
/// `{"token_str": ..., "score": ...}` objects in any order.
pub struct RemoteScorer {
    client: reqwest::blocking::Client,
    url: String,
    mask_token: Option<String>,
    api_token: Option<String>,
    retry: RetryPolicy,
    max_in_flight: usize,
    gate: Gate,
}

impl RemoteScorer {
    /// Builds a client; the bearer token is read from `BIASPROBE_API_TOKEN`.
    pub fn new(url: &str, mask_token: Option<String>) -> Result<Self, ScoreError> {
        Self::with_options(
            url,
            mask_token,
            std::env::var(API_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            DEFAULT_TIMEOUT,
            RetryPolicy::default(),
            DEFAULT_MAX_IN_FLIGHT,
        )
    }

    pub fn with_options(
        url: &str,
        mask_token: Option<String>,
        api_token: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
        max_in_flight: usize,
    ) -> Result<Self, ScoreError> {
        if url.is_empty() {
            return Err(ScoreError::Config("remote scorer needs an endpoint URL".into()));
        }
        if retry.max_attempts == 0 {
            return Err(ScoreError::Config("max_attempts must be >= 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScoreError::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            url: url.to_string(),
            mask_token,
            api_token,
            retry,
            max_in_flight: max_in_flight.max(1),
            gate: Gate::new(max_in_flight),
        })
    }

    /// The probe text with `[MASK]` replaced by the served model's mask token.
    pub fn request_text(&self, probe: &ProbeText) -> String {
        match &self.mask_token {
            Some(tok) => probe.text.replace(MASK, tok),
            None => probe.text.clone(),
        }
    }

    /// Maps a fill-mask response body to a sorted prediction.
    pub fn parse_response(body: &str) -> Result<MaskPrediction, ScoreError> {
        let candidates: Vec<Candidate> = serde_json::from_str(body)
            .map_err(|e| ScoreError::Protocol(format!("{e}: {}", truncate(body, 200))))?;
        let n = candidates.len();
        let entries = candidates
            .into_iter()
            .map(|c| TokenScore::new(c.token_str.trim(), c.score))
            .collect();
        MaskPrediction::new(entries, n)
    }

    fn attempt(&self, text: &str) -> Result<MaskPrediction, ScoreError> {
        let _permit = self.gate.acquire();
        let mut req = self.client.post(&self.url).json(&FillMaskRequest { inputs: text });
        if let Some(token) = &self.api_token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(map_transport)?;
        let status = resp.status();
        let body = resp.text().map_err(map_transport)?;
        if !status.is_success() {
            return Err(ScoreError::Http { status: status.as_u16(), body: truncate(&body, 500) });
        }
        Self::parse_response(&body)
    }
}

fn map_transport(e: reqwest::Error) -> ScoreError {
    if e.is_timeout() {
        ScoreError::Timeout
    } else {
        ScoreError::Transport(e.to_string())
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

impl Scorer for RemoteScorer {
    fn predict(&self, probe: &ProbeText, k: usize) -> Result<MaskPrediction, ScoreError> {
        let text = self.request_text(probe);
        let mut attempt = 1;
        loop {
            match self.attempt(&text) {
                Ok(pred) => return Ok(pred.truncated(k)),
                Err(e) if e.is_retriable() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.backoff(attempt);
                    warn!("attempt {attempt} for {text:?} failed ({e}); retrying in {delay:?}");
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => {
                    debug!("giving up on {text:?} after {attempt} attempt(s)");
                    return Err(e);
                }
            }
        }
    }

    fn descriptor(&self) -> String {
        format!("remote({})", self.url)
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_sorts() {
        let p = RemoteScorer::parse_response(
            r#"[{"token_str":"he","score":0.3},{"token_str":"she","score":0.4,"token":1}]"#,
        )
        .unwrap();
        assert_eq!(p.entries()[0], TokenScore::new("she", 0.4));
        assert_eq!(p.k_available(), 2);
    }

    #[test]
    fn rejects_malformed_bodies() {
        for body in [
            "{}",
            "not json",
            r#"[{"token":"she","score":0.4}]"#,
            r#"[{"token_str":"she","score":"high"}]"#,
            r#"[{"token_str":"she","score":1.5}]"#,
        ] {
            assert!(matches!(
                RemoteScorer::parse_response(body),
                Err(ScoreError::Protocol(_))
            ));
        }
    }

    #[test]
    fn mask_substitution() {
        let r = RemoteScorer::with_options(
            "http://127.0.0.1:1/",
            Some("<mask>".into()),
            None,
            DEFAULT_TIMEOUT,
            RetryPolicy::default(),
            4,
        )
        .unwrap();
        let probe = crate::scorer::test_probe("[MASK] was a child in 1901.", 10, "1901");
        assert_eq!(r.request_text(&probe), "<mask> was a child in 1901.");
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_secs(1));
        assert_eq!(p.backoff(2), Duration::from_secs(2));
        assert_eq!(p.backoff(3), Duration::from_secs(4));
    }
}
