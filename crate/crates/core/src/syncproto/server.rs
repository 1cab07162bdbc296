use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde_json::Value;

use crate::datastore::{ApplyOutcome, Document, KindSet, Store, StoreError};

use super::wire::{
    checksum, ChangesPage, CheckpointRequest, CheckpointResponse, Direction, Health, PushAck, PushBatch,
    PROTOCOL_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("protocol version {got} not supported (server speaks {expected})")]
    ProtocolVersionMismatch { expected: u32, got: u32 },
    #[error("checksum or length mismatch in batch ending at {last_seq}")]
    ChecksumMismatch { last_seq: u64 },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("missing or invalid bearer token")]
    Unauthorized,
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ServerError {
    pub fn status(&self) -> u16 {
        match self {
            ServerError::ProtocolVersionMismatch { .. } => 400,
            ServerError::ChecksumMismatch { .. } => 422,
            ServerError::BadRequest(_) => 400,
            ServerError::Unauthorized => 401,
            ServerError::Store(StoreError::StorageFull { .. }) => 507,
            ServerError::Store(_) => 500,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServerError::ProtocolVersionMismatch { .. } => "protocol_version_mismatch",
            ServerError::ChecksumMismatch { .. } => "checksum_mismatch",
            ServerError::BadRequest(_) => "bad_request",
            ServerError::Unauthorized => "unauthorized",
            ServerError::Store(StoreError::StorageFull { .. }) => "storage_full",
            ServerError::Store(_) => "store_error",
        }
    }
}

/// The cloud side of replication, over any [`Store`].
pub struct ReplicationServer {
    store: Arc<Store>,
    peers: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn checkpoint_key(peer: &str, direction: Direction) -> String {
    format!("checkpoint:{peer}:{direction}")
}

fn check_peer(peer: &str) -> Result<(), ServerError> {
    if peer.is_empty() || peer.contains('/') {
        return Err(ServerError::BadRequest(format!("invalid peer id `{peer}`")));
    }
    Ok(())
}

impl ReplicationServer {
    pub fn new(store: Arc<Store>) -> Self {
        ReplicationServer { store, peers: Mutex::new(HashMap::new()) }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn check_version(version: u32) -> Result<(), ServerError> {
        if version != PROTOCOL_VERSION {
            return Err(ServerError::ProtocolVersionMismatch { expected: PROTOCOL_VERSION, got: version });
        }
        Ok(())
    }

    fn peer_lock(&self, peer: &str) -> Arc<Mutex<()>> {
        self.peers.lock().unwrap().entry(peer.to_string()).or_default().clone()
    }

    pub fn health(&self) -> Health {
        Health { status: "ok".into(), protocol_version: PROTOCOL_VERSION, last_seq: self.store.last_seq() }
    }

    fn stored_checkpoint(&self, peer: &str, direction: Direction) -> u64 {
        self.store.meta(&checkpoint_key(peer, direction)).and_then(|v| v.as_u64()).unwrap_or(0)
    }

    fn advance_checkpoint(&self, peer: &str, direction: Direction, seq: u64) -> Result<u64, ServerError> {
        let current = self.stored_checkpoint(peer, direction);
        let next = current.max(seq);
        if next != current {
            self.store.set_meta(&checkpoint_key(peer, direction), Value::from(next))?;
        }
        Ok(next)
    }

    /// Applies a push batch. Nothing is written unless the version, length
    /// prefix and checksum all check out.
    pub fn push(&self, version: u32, batch: &PushBatch) -> Result<PushAck, ServerError> {
        Self::check_version(version)?;
        check_peer(&batch.peer)?;
        if batch.count != batch.docs.len() || batch.checksum != checksum(&batch.docs) {
            return Err(ServerError::ChecksumMismatch { last_seq: batch.last_seq });
        }
        let lock = self.peer_lock(&batch.peer);
        let _guard = lock.lock().unwrap();
        let (mut applied, mut duplicates) = (0, 0);
        for doc in &batch.docs {
            let doc = Document {
                id: format!("{}/{}", batch.peer, doc.id),
                origin: Some(batch.peer.clone()),
                ..doc.clone()
            };
            match self.store.apply_replicated(doc)? {
                ApplyOutcome::Applied => applied += 1,
                ApplyOutcome::Stale => duplicates += 1,
            }
        }
        let checkpoint = self.advance_checkpoint(&batch.peer, Direction::Push, batch.last_seq)?;
        Ok(PushAck { applied, duplicates, checkpoint })
    }

    /// Changes after `since` matching `filter`, excluding the requesting
    /// peer's own namespace.
    pub fn changes(
        &self,
        version: u32,
        peer: &str,
        since: u64,
        filter: &KindSet,
        limit: usize,
    ) -> Result<ChangesPage, ServerError> {
        Self::check_version(version)?;
        check_peer(peer)?;
        if limit == 0 {
            return Err(ServerError::BadRequest("limit must be positive".into()));
        }
        let own = format!("{peer}/");
        let (entries, scanned) = self.store.changes_with_docs(since, filter, Some(limit));
        // one result per id, newest state
        let mut by_id: BTreeMap<String, (u64, Document)> = BTreeMap::new();
        for (entry, doc) in entries {
            if !doc.id.starts_with(&own) {
                by_id.insert(doc.id.clone(), (entry.seq, doc));
            }
        }
        let mut results: Vec<(u64, Document)> = by_id.into_values().collect();
        results.sort_by_key(|(seq, _)| *seq);
        let results: Vec<Document> = results.into_iter().map(|(_, d)| d).collect();
        Ok(ChangesPage {
            count: results.len(),
            checksum: checksum(&results),
            results,
            last_seq: scanned,
            more: scanned < self.store.last_seq(),
        })
    }

    pub fn checkpoint(&self, version: u32, request: &CheckpointRequest) -> Result<CheckpointResponse, ServerError> {
        Self::check_version(version)?;
        check_peer(&request.peer)?;
        let lock = self.peer_lock(&request.peer);
        let _guard = lock.lock().unwrap();
        let sequence = match request.sequence {
            Some(seq) => self.advance_checkpoint(&request.peer, request.direction, seq)?,
            None => self.stored_checkpoint(&request.peer, request.direction),
        };
        Ok(CheckpointResponse { peer: request.peer.clone(), direction: request.direction, sequence })
    }
}
