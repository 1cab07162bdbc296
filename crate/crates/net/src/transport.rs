//! Blocking HTTP client side of replication.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;

use openchamber_core::datastore::KindSet;
use openchamber_core::syncproto::{
    ChangesPage, CheckpointRequest, CheckpointResponse, Health, PushAck, PushBatch, SyncError, SyncTransport,
    PROTOCOL_VERSION, VERSION_HEADER,
};

use crate::error::ApiError;
use crate::replication::MAX_PUSH_BYTES;

/// Talks to a replication endpoint such as `openchamber cloud`.
pub struct HttpTransport {
    base: String,
    token: Option<String>,
    version: u32,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .new_agent();
        HttpTransport { base: base_url.trim_end_matches('/').to_string(), token, version: PROTOCOL_VERSION, agent }
    }

    /// Announces a different protocol version; for testing the server's
    /// refusal.
    pub fn with_version(mut self, version: u32) -> Self {
        self.version = version;
        self
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn auth(&self) -> Option<String> {
        self.token.as_ref().map(|t| format!("Bearer {t}"))
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, SyncError> {
        let mut req = self.agent.get(self.url(path)).header(VERSION_HEADER, self.version.to_string());
        if let Some(a) = self.auth() {
            req = req.header("Authorization", a);
        }
        for (k, v) in query {
            req = req.query(*k, v);
        }
        self.finish(req.call())
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T, SyncError> {
        let mut req = self.agent.post(self.url(path)).header(VERSION_HEADER, self.version.to_string());
        if let Some(a) = self.auth() {
            req = req.header("Authorization", a);
        }
        self.finish(req.send_json(body))
    }

    fn finish<T: DeserializeOwned>(
        &self,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, SyncError> {
        let mut resp = result.map_err(network)?;
        let status = resp.status().as_u16();
        let server_version = resp
            .headers()
            .get(VERSION_HEADER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<u32>().ok());
        let bytes =
            resp.body_mut().with_config().limit(MAX_PUSH_BYTES as u64).read_to_vec().map_err(network)?;
        if (200..300).contains(&status) {
            return serde_json::from_slice(&bytes).map_err(|e| SyncError::Rejected {
                status,
                code: "bad_response".into(),
                message: e.to_string(),
            });
        }
        // a proxy in front of a server that is down
        if matches!(status, 502..=504) {
            return Err(SyncError::NetworkUnavailable(format!("HTTP {status}")));
        }
        let err: ApiError = serde_json::from_slice(&bytes).unwrap_or_else(|_| ApiError {
            status,
            code: "bad_response".into(),
            message: String::from_utf8_lossy(&bytes).into_owned(),
        });
        Err(match err.code.as_str() {
            "protocol_version_mismatch" => {
                SyncError::ProtocolVersionMismatch { client: self.version, server: server_version.unwrap_or(0) }
            }
            _ => SyncError::Rejected { status, code: err.code, message: err.message },
        })
    }
}

fn network(e: ureq::Error) -> SyncError {
    SyncError::NetworkUnavailable(e.to_string())
}

impl SyncTransport for HttpTransport {
    fn health(&self) -> Result<Health, SyncError> {
        self.get("/health", &[])
    }

    fn push(&self, batch: &PushBatch) -> Result<PushAck, SyncError> {
        self.post("/replicate/push", batch).map_err(|e| match e {
            SyncError::Rejected { code, .. } if code == "checksum_mismatch" => {
                SyncError::ChecksumMismatch { last_seq: batch.last_seq }
            }
            other => other,
        })
    }

    fn changes(&self, peer: &str, since: u64, filter: &KindSet, limit: usize) -> Result<ChangesPage, SyncError> {
        let query = [
            ("peer", peer.to_string()),
            ("since", since.to_string()),
            ("filter", filter.to_string()),
            ("limit", limit.to_string()),
        ];
        self.get("/replicate/changes", &query)
    }

    fn checkpoint(&self, request: &CheckpointRequest) -> Result<CheckpointResponse, SyncError> {
        self.post("/replicate/checkpoint", request)
    }
}
