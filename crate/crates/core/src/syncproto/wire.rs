use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datastore::{Document, KindSet, StoreError};

use super::server::{ReplicationServer, ServerError};

pub const PROTOCOL_VERSION: u32 = 1;
pub const VERSION_HEADER: &str = "X-Sync-Version";
/// Documents per push batch and per pull page.
pub const BATCH_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Push,
    Pull,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Push => "push",
            Direction::Pull => "pull",
        })
    }
}

/// CRC32 over the canonical JSON encoding of a document list.
pub fn checksum(docs: &[Document]) -> u32 {
    crc32fast::hash(&serde_json::to_vec(docs).expect("documents serialize"))
}

/// One push batch. `count` is the length prefix and must match `docs`;
/// `last_seq` is the client feed position the batch covers up to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushBatch {
    pub peer: String,
    pub count: usize,
    pub docs: Vec<Document>,
    pub last_seq: u64,
    pub checksum: u32,
}

impl PushBatch {
    pub fn new(peer: impl Into<String>, docs: Vec<Document>, last_seq: u64) -> Self {
        PushBatch { peer: peer.into(), count: docs.len(), checksum: checksum(&docs), docs, last_seq }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushAck {
    /// Documents stored by this batch.
    pub applied: usize,
    /// Documents the server already had at this revision or newer.
    pub duplicates: usize,
    /// Push checkpoint now recorded for the peer.
    pub checkpoint: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangesPage {
    pub count: usize,
    pub results: Vec<Document>,
    /// Server feed position scanned up to; the next `since`.
    pub last_seq: u64,
    pub more: bool,
    pub checksum: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRequest {
    pub peer: String,
    pub direction: Direction,
    /// When present, the server records `max(stored, sequence)`.
    #[serde(default)]
    pub sequence: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointResponse {
    pub peer: String,
    pub direction: Direction,
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub protocol_version: u32,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub id: String,
    pub client_revision: u64,
    pub server_revision: u64,
    /// Where the local copy was preserved.
    pub preserved_as: String,
}

#[derive(Debug, thiserror::Error)]
pub enum SyncError {
    #[error("server unreachable: {0}")]
    NetworkUnavailable(String),
    #[error("protocol version mismatch: client {client}, server {server}")]
    ProtocolVersionMismatch { client: u32, server: u32 },
    #[error("checksum mismatch on batch ending at sequence {last_seq}")]
    ChecksumMismatch { last_seq: u64 },
    #[error("server rejected request ({status} {code}): {message}")]
    Rejected { status: u16, code: String, message: String },
    #[error("a sync is already in progress")]
    Busy,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// The client's view of a replication endpoint.
pub trait SyncTransport {
    fn health(&self) -> Result<Health, SyncError>;
    fn push(&self, batch: &PushBatch) -> Result<PushAck, SyncError>;
    fn changes(&self, peer: &str, since: u64, filter: &KindSet, limit: usize) -> Result<ChangesPage, SyncError>;
    fn checkpoint(&self, request: &CheckpointRequest) -> Result<CheckpointResponse, SyncError>;
}

impl<T: SyncTransport + ?Sized> SyncTransport for &T {
    fn health(&self) -> Result<Health, SyncError> {
        (**self).health()
    }
    fn push(&self, batch: &PushBatch) -> Result<PushAck, SyncError> {
        (**self).push(batch)
    }
    fn changes(&self, peer: &str, since: u64, filter: &KindSet, limit: usize) -> Result<ChangesPage, SyncError> {
        (**self).changes(peer, since, filter, limit)
    }
    fn checkpoint(&self, request: &CheckpointRequest) -> Result<CheckpointResponse, SyncError> {
        (**self).checkpoint(request)
    }
}

impl From<ServerError> for SyncError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::ProtocolVersionMismatch { expected, got } => {
                SyncError::ProtocolVersionMismatch { client: got, server: expected }
            }
            ServerError::ChecksumMismatch { last_seq } => SyncError::ChecksumMismatch { last_seq },
            other => SyncError::Rejected { status: other.status(), code: other.code().into(), message: other.to_string() },
        }
    }
}

/// Calls a [`ReplicationServer`] in-process.
#[derive(Clone)]
pub struct LocalTransport {
    pub server: Arc<ReplicationServer>,
    pub version: u32,
}

impl LocalTransport {
    pub fn new(server: Arc<ReplicationServer>) -> Self {
        LocalTransport { server, version: PROTOCOL_VERSION }
    }
}

impl SyncTransport for LocalTransport {
    fn health(&self) -> Result<Health, SyncError> {
        Ok(self.server.health())
    }

    fn push(&self, batch: &PushBatch) -> Result<PushAck, SyncError> {
        Ok(self.server.push(self.version, batch)?)
    }

    fn changes(&self, peer: &str, since: u64, filter: &KindSet, limit: usize) -> Result<ChangesPage, SyncError> {
        Ok(self.server.changes(self.version, peer, since, filter, limit)?)
    }

    fn checkpoint(&self, request: &CheckpointRequest) -> Result<CheckpointResponse, SyncError> {
        Ok(self.server.checkpoint(self.version, request)?)
    }
}
