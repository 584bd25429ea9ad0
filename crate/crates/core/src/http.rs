//! Minimal blocking JSON-over-HTTP helper used by the remote providers.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct HttpError {
    pub status: Option<u16>,
    pub message: String,
    pub retry_after: Option<Duration>,
}

impl HttpError {
    pub fn is_rate_limit(&self) -> bool {
        self.status == Some(429)
    }
}

pub fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs.max(1))))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs `body` as JSON with a bearer token taken from `api_key_env` (if set)
/// and decodes the JSON response.
pub fn post_json<B: Serialize, T: DeserializeOwned>(
    agent: &ureq::Agent,
    url: &str,
    api_key_env: &str,
    body: &B,
) -> Result<T, HttpError> {
    let mut request = agent.post(url).header("Content-Type", "application/json");
    if let Ok(key) = std::env::var(api_key_env) {
        if !key.is_empty() {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
    }
    let mut response = request.send_json(body).map_err(|e| HttpError {
        status: None,
        message: e.to_string(),
        retry_after: None,
    })?;
    let status = response.status().as_u16();
    if !(200..300).contains(&status) {
        let retry_after = response
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(Duration::from_secs_f64);
        let text = response.body_mut().read_to_string().unwrap_or_default();
        return Err(HttpError {
            status: Some(status),
            message: format!(
                "HTTP {status}: {}",
                text.chars().take(500).collect::<String>()
            ),
            retry_after,
        });
    }
    response.body_mut().read_json::<T>().map_err(|e| HttpError {
        status: Some(status),
        message: format!("malformed response: {e}"),
        retry_after: None,
    })
}
