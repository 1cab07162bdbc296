//! Asymmetric replication between a chamber's local store and a cloud store.
//!
//! Clients push every locally authored document; the server files them under
//! `<peer>/<id>` so clients never collide. Clients pull only documents whose
//! kind matches their filter (recipes by default). Both directions advance a
//! checkpoint only after the other side has acknowledged a batch, so an
//! interrupted sync resumes where it stopped and replays are harmless.

mod client;
mod server;
mod wire;

pub use client::{Replicator, SyncOptions, SyncReport};
pub use server::{ReplicationServer, ServerError};
pub use wire::{
    checksum, ChangesPage, CheckpointRequest, CheckpointResponse, Conflict, Direction, Health, LocalTransport,
    PushAck, PushBatch, SyncError, SyncTransport, BATCH_SIZE, PROTOCOL_VERSION, VERSION_HEADER,
};
