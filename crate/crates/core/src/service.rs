//! Minimal HTTP plumbing shared by the embedding, rewrite, and rerank
//! service clients. Transport failures are classified as transient
//! (worth retrying) or permanent so the retry policy can act uniformly.

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request to {url} timed out after {timeout:?}")]
    Timeout { url: String, timeout: Duration },
    #[error("transport failure for {url}: {detail}")]
    Connection { url: String, detail: String },
    #[error("{url} returned status {status}")]
    Status { url: String, status: u16 },
    #[error("malformed response from {url}: {detail}")]
    Malformed { url: String, detail: String },
}

impl TransportError {
    /// Timeouts, connection failures, and 5xx responses are transient;
    /// client errors and unparseable payloads are permanent.
    pub fn is_transient(&self) -> bool {
        match self {
            Self::Timeout { .. } | Self::Connection { .. } => true,
            Self::Status { status, .. } => *status >= 500,
            Self::Malformed { .. } => false,
        }
    }
}

/// Blocking JSON-over-HTTP POST, the one call shape every service here uses.
pub trait HttpClient: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, TransportError>;
}

/// Where a service lives and how to talk to it.
#[derive(Debug, Clone)]
pub struct Endpoint {
    pub url: String,
    /// Optional `Authorization` header value, e.g. `Bearer <token>`.
    pub auth: Option<String>,
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            auth: None,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_auth(mut self, auth: impl Into<String>) -> Self {
        self.auth = Some(auth.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

/// Default client backed by `ureq`.
pub struct UreqClient {
    endpoint: Endpoint,
    agent: ureq::Agent,
}

impl UreqClient {
    pub fn new(endpoint: Endpoint) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(endpoint.timeout)
            .build();
        Self { endpoint, agent }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }
}

impl HttpClient for UreqClient {
    fn post_json(
        &self,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, TransportError> {
        let mut request = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(auth) = &self.endpoint.auth {
            request = request.set("Authorization", auth);
        }
        let response = match request.send_string(&body.to_string()) {
            Ok(response) => response,
            Err(ureq::Error::Status(status, _)) => {
                return Err(TransportError::Status {
                    url: url.to_string(),
                    status,
                })
            }
            Err(ureq::Error::Transport(t)) => {
                let detail = t.to_string();
                return Err(if detail.contains("timed out") {
                    TransportError::Timeout {
                        url: url.to_string(),
                        timeout: self.endpoint.timeout,
                    }
                } else {
                    TransportError::Connection {
                        url: url.to_string(),
                        detail,
                    }
                });
            }
        };
        let text = response
            .into_string()
            .map_err(|e| TransportError::Connection {
                url: url.to_string(),
                detail: e.to_string(),
            })?;
        serde_json::from_str(&text).map_err(|e| TransportError::Malformed {
            url: url.to_string(),
            detail: e.to_string(),
        })
    }
}

/// Pull a required field out of a service response.
pub(crate) fn response_field<'a>(
    url: &str,
    value: &'a serde_json::Value,
    field: &str,
) -> Result<&'a serde_json::Value, TransportError> {
    value.get(field).ok_or_else(|| TransportError::Malformed {
        url: url.to_string(),
        detail: format!("missing field {field:?}"),
    })
}
