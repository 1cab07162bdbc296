use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, TryLockError};

use serde::Serialize;
use serde_json::Value;

use crate::datastore::{ApplyOutcome, DocKind, Document, KindSet, Store};

use super::wire::{
    checksum, CheckpointRequest, Conflict, Direction, PushBatch, SyncError, SyncTransport, BATCH_SIZE,
    PROTOCOL_VERSION,
};

/// Origin tag given to documents received from the server.
const SERVER_ORIGIN: &str = "server";
/// Attempts per batch before a checksum failure is reported.
const CHECKSUM_RETRIES: usize = 3;

#[derive(Debug, Clone)]
pub struct SyncOptions {
    /// This chamber's id; its documents live under `<peer_id>/` on the server.
    pub peer_id: String,
    /// Names the server in checkpoint keys, so one store can sync with
    /// several servers.
    pub server_id: String,
    pub pull_filter: KindSet,
    pub batch_size: usize,
}

impl SyncOptions {
    pub fn new(peer_id: impl Into<String>, server_id: impl Into<String>) -> Self {
        SyncOptions {
            peer_id: peer_id.into(),
            server_id: server_id.into(),
            pull_filter: KindSet::only([DocKind::Recipe]),
            batch_size: BATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyncReport {
    pub pushed: usize,
    pub pulled: usize,
    pub push_checkpoint: u64,
    pub pull_checkpoint: u64,
    pub conflicts: Vec<Conflict>,
}

/// Client side of replication for one local store.
pub struct Replicator {
    store: Arc<Store>,
    options: SyncOptions,
    running: Mutex<()>,
}

impl Replicator {
    pub fn new(store: Arc<Store>, options: SyncOptions) -> Self {
        Replicator { store, options, running: Mutex::new(()) }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn options(&self) -> &SyncOptions {
        &self.options
    }

    fn key(&self, direction: Direction) -> String {
        format!("sync:{}:{}", self.options.server_id, direction)
    }

    pub fn local_checkpoint(&self, direction: Direction) -> u64 {
        self.store.meta(&self.key(direction)).and_then(|v| v.as_u64()).unwrap_or(0)
    }

    fn save_checkpoint(&self, direction: Direction, seq: u64) -> Result<(), SyncError> {
        if seq > self.local_checkpoint(direction) {
            self.store.set_meta(&self.key(direction), Value::from(seq))?;
        }
        Ok(())
    }

    /// Push everything authored locally, then pull what matches the filter.
    pub fn sync(&self, transport: &dyn SyncTransport) -> Result<SyncReport, SyncError> {
        let _guard = match self.running.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(SyncError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let health = transport.health()?;
        if health.protocol_version != PROTOCOL_VERSION {
            return Err(SyncError::ProtocolVersionMismatch { client: PROTOCOL_VERSION, server: health.protocol_version });
        }
        let mut pushed = self.push_phase(transport)?;
        let (pulled, conflicts) = self.pull_phase(transport)?;
        if !conflicts.is_empty() {
            // preserved copies are local documents; send them now so one
            // round is enough to converge
            pushed += self.push_phase(transport)?;
        }
        Ok(SyncReport {
            pushed,
            pulled,
            push_checkpoint: self.local_checkpoint(Direction::Push),
            pull_checkpoint: self.local_checkpoint(Direction::Pull),
            conflicts,
        })
    }

    fn push_phase(&self, transport: &dyn SyncTransport) -> Result<usize, SyncError> {
        let peer = &self.options.peer_id;
        // the server may have acknowledged a batch whose ack we never saw
        let remote = transport
            .checkpoint(&CheckpointRequest { peer: peer.clone(), direction: Direction::Push, sequence: None })?
            .sequence;
        let mut cp = self.local_checkpoint(Direction::Push).max(remote.min(self.store.last_seq()));
        self.save_checkpoint(Direction::Push, cp)?;
        let mut pushed = 0;
        loop {
            let (entries, scanned) = self.store.changes_with_docs(cp, &KindSet::all(), Some(self.options.batch_size));
            if entries.is_empty() {
                break;
            }
            let mut latest: BTreeMap<String, (u64, Document)> = BTreeMap::new();
            for (entry, doc) in entries {
                if doc.origin.is_none() {
                    latest.insert(doc.id.clone(), (entry.seq, doc));
                }
            }
            let mut docs: Vec<(u64, Document)> = latest.into_values().collect();
            docs.sort_by_key(|(seq, _)| *seq);
            let docs: Vec<Document> = docs.into_iter().map(|(_, d)| d).collect();
            if !docs.is_empty() {
                let batch = PushBatch::new(peer.clone(), docs, scanned);
                let ack = retry_checksum(|| transport.push(&batch))?;
                pushed += ack.applied;
            }
            cp = scanned;
            self.save_checkpoint(Direction::Push, cp)?;
        }
        Ok(pushed)
    }

    fn pull_phase(&self, transport: &dyn SyncTransport) -> Result<(usize, Vec<Conflict>), SyncError> {
        let peer = &self.options.peer_id;
        let mut cp = self.local_checkpoint(Direction::Pull);
        let mut pulled = 0;
        let mut conflicts = Vec::new();
        loop {
            let page = retry_checksum(|| {
                let page = transport.changes(peer, cp, &self.options.pull_filter, self.options.batch_size)?;
                if page.count != page.results.len() || page.checksum != checksum(&page.results) {
                    return Err(SyncError::ChecksumMismatch { last_seq: page.last_seq });
                }
                Ok(page)
            })?;
            for doc in page.results {
                if !self.options.pull_filter.contains(doc.kind) {
                    continue;
                }
                if self.apply_pulled(doc, &mut conflicts)? {
                    pulled += 1;
                }
            }
            if page.last_seq > cp {
                cp = page.last_seq;
                self.save_checkpoint(Direction::Pull, cp)?;
                transport.checkpoint(&CheckpointRequest {
                    peer: peer.clone(),
                    direction: Direction::Pull,
                    sequence: Some(cp),
                })?;
            }
            if !page.more {
                break;
            }
        }
        Ok((pulled, conflicts))
    }

    /// Applies one server document. A locally authored document with the
    /// same id and different content loses: it is kept under a
    /// `~conflict-<rev>` id and reported.
    fn apply_pulled(&self, doc: Document, conflicts: &mut Vec<Conflict>) -> Result<bool, SyncError> {
        let incoming = Document { origin: Some(SERVER_ORIGIN.into()), ..doc };
        match self.store.get(&incoming.id) {
            Some(local) if local.origin.is_none() => {
                if local.body == incoming.body && local.deleted == incoming.deleted {
                    return Ok(false);
                }
                let preserved_as = format!("{}~conflict-{}", local.id, local.revision);
                if self.store.get(&preserved_as).is_none() {
                    self.store.put(&preserved_as, local.kind, local.body.clone(), None)?;
                }
                conflicts.push(Conflict {
                    id: local.id.clone(),
                    client_revision: local.revision,
                    server_revision: incoming.revision,
                    preserved_as,
                });
                self.store.overwrite_replicated(incoming)?;
                Ok(true)
            }
            _ => Ok(self.store.apply_replicated(incoming)? == ApplyOutcome::Applied),
        }
    }
}

fn retry_checksum<T>(mut f: impl FnMut() -> Result<T, SyncError>) -> Result<T, SyncError> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(SyncError::ChecksumMismatch { .. }) if attempt + 1 < CHECKSUM_RETRIES => attempt += 1,
            other => return other,
        }
    }
}
