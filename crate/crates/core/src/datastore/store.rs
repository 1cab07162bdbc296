//! Single-file document log.
//!
//! File layout: the 5-byte magic `OCST` + version byte, a newline, then one
//! JSON record per line:
//!
//! * `{"t":"doc","seq":N,"doc":{...}}`: a committed write carrying the body
//! * `{"t":"feed","seq":N,"id":..,"revision":..,"kind":..}`: a feed entry
//!   whose body was dropped by compaction
//! * `{"t":"meta","key":..,"value":..}`: store-local metadata, not replicated
//!
//! A torn final line (crash during append) is discarded on open.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions, TryLockError};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::csv_io::write_csv;
use super::points::{DataPoint, Stream};

pub const STORE_MAGIC: &[u8; 4] = b"OCST";
pub const STORE_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    Recipe,
    DatapointBatch,
    RunMeta,
}

impl DocKind {
    pub const ALL: [DocKind; 3] = [DocKind::Recipe, DocKind::DatapointBatch, DocKind::RunMeta];

    pub fn name(self) -> &'static str {
        match self {
            DocKind::Recipe => "recipe",
            DocKind::DatapointBatch => "datapoint_batch",
            DocKind::RunMeta => "run_meta",
        }
    }
}

impl FromStr for DocKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DocKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown document kind `{s}`"))
    }
}

/// A set of document kinds; used as a changes-feed filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KindSet(BTreeSet<DocKind>);

impl KindSet {
    pub fn all() -> Self {
        KindSet(DocKind::ALL.into_iter().collect())
    }

    pub fn only(kinds: impl IntoIterator<Item = DocKind>) -> Self {
        KindSet(kinds.into_iter().collect())
    }

    pub fn contains(&self, kind: DocKind) -> bool {
        self.0.contains(&kind)
    }

    pub fn is_all(&self) -> bool {
        self.0.len() == DocKind::ALL.len()
    }
}

impl fmt::Display for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_all() {
            return f.write_str("all");
        }
        let names: Vec<_> = self.0.iter().map(|k| k.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for KindSet {
    type Err = String;

    /// `all`, or a comma-separated list of kinds.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(KindSet::all());
        }
        s.split(',').filter(|p| !p.is_empty()).map(DocKind::from_str).collect::<Result<_, _>>().map(KindSet)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub revision: u64,
    pub kind: DocKind,
    pub body: Value,
    #[serde(default)]
    pub deleted: bool,
    /// Peer the document was received from; `None` for local writes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedEntry {
    pub seq: u64,
    pub id: String,
    pub revision: u64,
    pub kind: DocKind,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("document id must not be empty")]
    EmptyId,
    #[error("revision conflict on `{id}`: expected {expected:?}, current {current:?}")]
    RevisionConflict { id: String, expected: Option<u64>, current: Option<u64> },
    #[error("storage full ({used} of {capacity} bytes used)")]
    StorageFull { used: u64, capacity: u64 },
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("document `{id}` is a {actual:?}, not a {expected:?}")]
    WrongKind { id: String, expected: DocKind, actual: DocKind },
    #[error("store file is corrupt: {0}")]
    Corrupt(String),
    #[error("store file {0} is in use by another process")]
    Locked(String),
    #[error("unsupported store version {0}")]
    Version(u8),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::EmptyId => "empty_id",
            StoreError::RevisionConflict { .. } => "revision_conflict",
            StoreError::StorageFull { .. } => "storage_full",
            StoreError::UnknownRun(_) => "unknown_run",
            StoreError::WrongKind { .. } => "wrong_kind",
            StoreError::Corrupt(_) => "store_corrupt",
            StoreError::Locked(_) => "store_locked",
            StoreError::Version(_) => "store_version",
            StoreError::Io(_) => "store_io",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    /// `fsync` after every append.
    pub sync: bool,
    /// Maximum log size in bytes.
    pub capacity_bytes: Option<u64>,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { sync: true, capacity_bytes: None }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case")]
enum Record {
    Doc { seq: u64, doc: Document },
    Feed(FeedEntry),
    Meta { key: String, value: Value },
}

#[derive(Debug, Default)]
struct State {
    docs: BTreeMap<String, Document>,
    feed: Vec<FeedEntry>,
    meta: BTreeMap<String, Value>,
    /// run id -> batch document ids in write order
    runs: BTreeMap<String, Vec<String>>,
    bytes: u64,
}

impl State {
    fn apply(&mut self, record: Record) {
        match record {
            Record::Doc { seq, doc } => {
                self.feed.push(FeedEntry { seq, id: doc.id.clone(), revision: doc.revision, kind: doc.kind });
                self.index(&doc);
                self.docs.insert(doc.id.clone(), doc);
            }
            Record::Feed(entry) => self.feed.push(entry),
            Record::Meta { key, value } => {
                self.meta.insert(key, value);
            }
        }
    }

    fn index(&mut self, doc: &Document) {
        let run_id = match doc.kind {
            DocKind::DatapointBatch | DocKind::RunMeta => doc.body.get("run_id").and_then(Value::as_str),
            DocKind::Recipe => None,
        };
        if let Some(run_id) = run_id {
            let ids = self.runs.entry(run_id.to_string()).or_default();
            if doc.kind == DocKind::DatapointBatch && !ids.contains(&doc.id) {
                ids.push(doc.id.clone());
            }
        }
    }

    fn next_seq(&self) -> u64 {
        self.feed.last().map_or(1, |e| e.seq + 1)
    }
}

/// Document store with a gapless changes feed.
///
/// One writer at a time; readers take a consistent snapshot of whatever
/// was committed when they were called.
pub struct Store {
    state: RwLock<State>,
    file: Mutex<Option<File>>,
    path: Option<PathBuf>,
    options: StoreOptions,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store").field("path", &self.path).finish()
    }
}

fn lock(file: &File, path: &Path) -> Result<(), StoreError> {
    match file.try_lock() {
        Ok(()) => Ok(()),
        Err(TryLockError::WouldBlock) => Err(StoreError::Locked(path.display().to_string())),
        Err(TryLockError::Error(e)) => Err(e.into()),
    }
}

fn header() -> Vec<u8> {
    let mut h = STORE_MAGIC.to_vec();
    h.push(STORE_VERSION);
    h.push(b'\n');
    h
}

impl Store {
    /// A store that lives only in memory.
    pub fn in_memory() -> Store {
        Store::in_memory_with(StoreOptions { sync: false, capacity_bytes: None })
    }

    pub fn in_memory_with(options: StoreOptions) -> Store {
        Store { state: RwLock::new(State::default()), file: Mutex::new(None), path: None, options }
    }

    /// Opens (or creates) the log at `path` and replays it. The file is
    /// locked for as long as the store lives, so a second process gets
    /// [`StoreError::Locked`] instead of interleaving writes.
    pub fn open(path: impl AsRef<Path>, options: StoreOptions) -> Result<Store, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        lock(&file, &path)?;
        let mut state = State::default();
        if file.metadata()?.len() > 0 {
            let mut reader = BufReader::new(File::open(&path)?);
            let mut head = Vec::new();
            reader.read_until(b'\n', &mut head)?;
            if head.len() != 6 || &head[..4] != STORE_MAGIC {
                return Err(StoreError::Corrupt("bad magic".into()));
            }
            if head[4] != STORE_VERSION {
                return Err(StoreError::Version(head[4]));
            }
            let mut valid_len = head.len() as u64;
            let mut line = Vec::new();
            loop {
                line.clear();
                let n = reader.read_until(b'\n', &mut line)?;
                if n == 0 {
                    break;
                }
                if line.last() != Some(&b'\n') {
                    // torn tail
                    break;
                }
                let record: Record = serde_json::from_slice(&line)
                    .map_err(|e| StoreError::Corrupt(format!("record at byte {valid_len}: {e}")))?;
                state.apply(record);
                valid_len += n as u64;
            }
            file.set_len(valid_len)?;
            state.bytes = valid_len;
        } else {
            file.write_all(&header())?;
            file.sync_all()?;
            state.bytes = header().len() as u64;
        }
        Ok(Store { state: RwLock::new(state), file: Mutex::new(Some(file)), path: Some(path), options })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn append(&self, state: &mut State, record: Record) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');
        if let Some(capacity) = self.options.capacity_bytes {
            if state.bytes + line.len() as u64 > capacity {
                return Err(StoreError::StorageFull { used: state.bytes, capacity });
            }
        }
        let mut file = self.file.lock().unwrap();
        if let Some(f) = file.as_mut() {
            f.write_all(&line).map_err(|e| match e.raw_os_error() {
                Some(28) => StoreError::StorageFull { used: state.bytes, capacity: state.bytes },
                _ => StoreError::Io(e),
            })?;
            if self.options.sync {
                f.sync_data()?;
            }
        }
        state.bytes += line.len() as u64;
        state.apply(record);
        Ok(())
    }

    fn commit(&self, state: &mut State, doc: Document) -> Result<u64, StoreError> {
        let seq = state.next_seq();
        let revision = doc.revision;
        self.append(state, Record::Doc { seq, doc })?;
        Ok(revision)
    }

    /// Local write. `expected_revision` must equal the current revision of
    /// an existing document, and must be `None` (or `Some(0)`) for a new one.
    pub fn put(
        &self,
        id: &str,
        kind: DocKind,
        body: Value,
        expected_revision: Option<u64>,
    ) -> Result<u64, StoreError> {
        self.write_local(id, kind, body, expected_revision, false)
    }

    pub fn delete(&self, id: &str, expected_revision: u64) -> Result<u64, StoreError> {
        let kind = self
            .get(id)
            .map(|d| d.kind)
            .ok_or_else(|| StoreError::RevisionConflict { id: id.into(), expected: Some(expected_revision), current: None })?;
        self.write_local(id, kind, Value::Null, Some(expected_revision), true)
    }

    fn write_local(
        &self,
        id: &str,
        kind: DocKind,
        body: Value,
        expected: Option<u64>,
        deleted: bool,
    ) -> Result<u64, StoreError> {
        if id.is_empty() {
            return Err(StoreError::EmptyId);
        }
        let mut state = self.state.write().unwrap();
        let current = state.docs.get(id).map(|d| d.revision);
        let ok = match (current, expected) {
            (None, None | Some(0)) => true,
            (Some(cur), Some(exp)) => cur == exp,
            _ => false,
        };
        if !ok {
            return Err(StoreError::RevisionConflict { id: id.into(), expected, current });
        }
        let revision = current.unwrap_or(0) + 1;
        self.commit(&mut state, Document { id: id.into(), revision, kind, body, deleted, origin: None })
    }

    /// Stores a document received from a peer, keeping its revision.
    /// Documents at or below the stored revision are ignored.
    pub fn apply_replicated(&self, doc: Document) -> Result<ApplyOutcome, StoreError> {
        if doc.id.is_empty() {
            return Err(StoreError::EmptyId);
        }
        let mut state = self.state.write().unwrap();
        if let Some(cur) = state.docs.get(&doc.id) {
            if cur.revision >= doc.revision {
                return Ok(ApplyOutcome::Stale);
            }
        }
        self.commit(&mut state, doc)?;
        Ok(ApplyOutcome::Applied)
    }

    /// Replaces a document with a peer's version regardless of revision
    /// order; the stored revision becomes the peer's.
    pub fn overwrite_replicated(&self, doc: Document) -> Result<u64, StoreError> {
        if doc.id.is_empty() {
            return Err(StoreError::EmptyId);
        }
        let mut state = self.state.write().unwrap();
        self.commit(&mut state, doc)
    }

    pub fn get(&self, id: &str) -> Option<Document> {
        self.state.read().unwrap().docs.get(id).cloned()
    }

    /// Live (non-deleted) documents of `kind`, by id.
    pub fn list(&self, kind: DocKind) -> Vec<Document> {
        self.state.read().unwrap().docs.values().filter(|d| d.kind == kind && !d.deleted).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn last_seq(&self) -> u64 {
        self.state.read().unwrap().feed.last().map_or(0, |e| e.seq)
    }

    /// Feed entries after `seq` whose kind is in `filter`, in sequence order,
    /// at most `limit` of them.
    pub fn changes_since(&self, seq: u64, filter: &KindSet, limit: Option<usize>) -> Vec<FeedEntry> {
        let state = self.state.read().unwrap();
        let start = state.feed.partition_point(|e| e.seq <= seq);
        state.feed[start..]
            .iter()
            .filter(|e| filter.contains(e.kind))
            .take(limit.unwrap_or(usize::MAX))
            .cloned()
            .collect()
    }

    /// Snapshot of the feed and the documents it references.
    pub fn changes_with_docs(
        &self,
        seq: u64,
        filter: &KindSet,
        limit: Option<usize>,
    ) -> (Vec<(FeedEntry, Document)>, u64) {
        let state = self.state.read().unwrap();
        let start = state.feed.partition_point(|e| e.seq <= seq);
        let mut out = Vec::new();
        let mut scanned = seq;
        for e in &state.feed[start..] {
            if limit.is_some_and(|l| out.len() >= l) {
                break;
            }
            scanned = e.seq;
            if filter.contains(e.kind) {
                out.push((e.clone(), state.docs[&e.id].clone()));
            }
        }
        (out, scanned)
    }

    pub fn meta(&self, key: &str) -> Option<Value> {
        self.state.read().unwrap().meta.get(key).cloned()
    }

    pub fn set_meta(&self, key: &str, value: Value) -> Result<(), StoreError> {
        let mut state = self.state.write().unwrap();
        if state.meta.get(key) == Some(&value) {
            return Ok(());
        }
        self.append(&mut state, Record::Meta { key: key.into(), value })
    }

    /// Rewrites the log keeping only the newest body of each document.
    /// The feed is preserved in full.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut state = self.state.write().unwrap();
        let mut out = header();
        let latest: BTreeMap<&str, u64> = state.feed.iter().map(|e| (e.id.as_str(), e.seq)).collect();
        for e in &state.feed {
            let doc = &state.docs[&e.id];
            let record = if latest[e.id.as_str()] == e.seq {
                Record::Doc { seq: e.seq, doc: doc.clone() }
            } else {
                Record::Feed(e.clone())
            };
            out.extend(serde_json::to_vec(&record).expect("record serializes"));
            out.push(b'\n');
        }
        for (key, value) in &state.meta {
            out.extend(serde_json::to_vec(&Record::Meta { key: key.clone(), value: value.clone() }).unwrap());
            out.push(b'\n');
        }
        if let Some(path) = &self.path {
            let tmp = path.with_extension("compact");
            let mut f = File::create(&tmp)?;
            lock(&f, &tmp)?;
            f.write_all(&out)?;
            f.sync_all()?;
            std::fs::rename(&tmp, path)?;
            // positioned at the end, so later appends land after `out`
            *self.file.lock().unwrap() = Some(f);
        }
        state.bytes = out.len() as u64;
        Ok(())
    }

    /// Writes one batch of telemetry as a `datapoint_batch` document.
    pub fn append_points(&self, run_id: &str, points: &[DataPoint]) -> Result<String, StoreError> {
        let n = self.state.read().unwrap().runs.get(run_id).map_or(0, Vec::len);
        let id = format!("batch:{run_id}:{n:06}");
        let rows: Vec<Value> = points
            .iter()
            .map(|p| serde_json::json!([p.timestamp, p.variable, p.value, p.stream]))
            .collect();
        self.put(&id, DocKind::DatapointBatch, serde_json::json!({"run_id": run_id, "points": rows}), None)?;
        Ok(id)
    }

    /// Records run metadata under `run:<run_id>`.
    pub fn put_run_meta(&self, run_id: &str, mut meta: Value) -> Result<u64, StoreError> {
        let id = format!("run:{run_id}");
        if let Value::Object(m) = &mut meta {
            m.insert("run_id".into(), Value::String(run_id.into()));
        }
        let expected = self.get(&id).map(|d| d.revision);
        self.put(&id, DocKind::RunMeta, meta, expected)
    }

    pub fn run_ids(&self) -> Vec<String> {
        let state = self.state.read().unwrap();
        let mut ids: BTreeSet<String> = state.runs.keys().cloned().collect();
        ids.extend(
            state.docs.values().filter(|d| d.kind == DocKind::RunMeta).filter_map(|d| {
                d.body.get("run_id").and_then(Value::as_str).map(String::from)
            }),
        );
        ids.into_iter().collect()
    }

    pub fn has_run(&self, run_id: &str) -> bool {
        let state = self.state.read().unwrap();
        state.runs.contains_key(run_id) || state.docs.contains_key(&format!("run:{run_id}"))
    }

    /// All points of a run, in write order.
    pub fn points(&self, run_id: &str) -> Result<Vec<DataPoint>, StoreError> {
        let state = self.state.read().unwrap();
        if !state.runs.contains_key(run_id) && !state.docs.contains_key(&format!("run:{run_id}")) {
            return Err(StoreError::UnknownRun(run_id.into()));
        }
        let mut out = Vec::new();
        for id in state.runs.get(run_id).into_iter().flatten() {
            let doc = &state.docs[id];
            if doc.deleted {
                continue;
            }
            let rows = doc.body.get("points").and_then(Value::as_array).ok_or_else(|| {
                StoreError::Corrupt(format!("batch `{id}` has no points"))
            })?;
            for row in rows {
                let (timestamp, variable, value, stream) = serde_json::from_value(row.clone())
                    .map_err(|e| StoreError::Corrupt(format!("batch `{id}`: {e}")))?;
                out.push(DataPoint { timestamp, variable, value, stream, run_id: run_id.into() });
            }
        }
        Ok(out)
    }

    /// CSV export of one run, optionally restricted to one stream.
    pub fn export_csv(&self, run_id: &str, stream: Option<Stream>) -> Result<Vec<u8>, StoreError> {
        let mut points = self.points(run_id)?;
        if let Some(s) = stream {
            points.retain(|p| p.stream == s);
        }
        Ok(write_csv(&points))
    }
}

/// Result of [`Store::apply_replicated`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Applied,
    Stale,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::variable::Variable;
    use serde_json::json;

    #[test]
    fn revisions() {
        let s = Store::in_memory();
        assert_eq!(s.put("r1", DocKind::Recipe, json!({}), None).unwrap(), 1);
        assert_eq!(s.put("r1", DocKind::Recipe, json!({"a":1}), Some(1)).unwrap(), 2);
        assert!(matches!(
            s.put("r1", DocKind::Recipe, json!({}), Some(1)),
            Err(StoreError::RevisionConflict { current: Some(2), .. })
        ));
        assert!(matches!(s.put("r1", DocKind::Recipe, json!({}), None), Err(StoreError::RevisionConflict { .. })));
        assert!(matches!(s.put("r2", DocKind::Recipe, json!({}), Some(3)), Err(StoreError::RevisionConflict { .. })));
        assert!(matches!(s.put("", DocKind::Recipe, json!({}), None), Err(StoreError::EmptyId)));
        assert_eq!(s.last_seq(), 2);
    }

    #[test]
    fn empty_feed() {
        let s = Store::in_memory();
        assert!(s.changes_since(0, &KindSet::all(), None).is_empty());
        assert!(s.changes_since(42, &KindSet::all(), None).is_empty());
    }

    #[test]
    fn filtered_feed() {
        let s = Store::in_memory();
        s.put("a", DocKind::Recipe, json!({}), None).unwrap();
        s.put("b", DocKind::DatapointBatch, json!({"run_id":"x","points":[]}), None).unwrap();
        s.put("c", DocKind::Recipe, json!({}), None).unwrap();
        let f = s.changes_since(0, &KindSet::only([DocKind::Recipe]), None);
        assert_eq!(f.iter().map(|e| (e.seq, e.id.as_str())).collect::<Vec<_>>(), [(1, "a"), (3, "c")]);
    }

    #[test]
    fn kindset_parse() {
        assert_eq!("all".parse::<KindSet>().unwrap(), KindSet::all());
        assert_eq!("recipe".parse::<KindSet>().unwrap(), KindSet::only([DocKind::Recipe]));
        assert_eq!(KindSet::only([DocKind::Recipe, DocKind::RunMeta]).to_string(), "recipe,run_meta");
        assert!("bogus".parse::<KindSet>().is_err());
    }

    #[test]
    fn storage_full() {
        let s = Store::in_memory_with(StoreOptions { sync: false, capacity_bytes: Some(200) });
        s.put("a", DocKind::Recipe, json!({}), None).unwrap();
        let err = s.put("b", DocKind::Recipe, json!({"pad": "x".repeat(300)}), None).unwrap_err();
        assert!(matches!(err, StoreError::StorageFull { .. }));
        assert_eq!(s.last_seq(), 1);
    }

    #[test]
    fn replicated_writes_keep_revision() {
        let s = Store::in_memory();
        let doc = |rev| Document { id: "p/x".into(), revision: rev, kind: DocKind::Recipe, body: json!({}), deleted: false, origin: Some("p".into()) };
        assert_eq!(s.apply_replicated(doc(3)).unwrap(), ApplyOutcome::Applied);
        assert_eq!(s.apply_replicated(doc(3)).unwrap(), ApplyOutcome::Stale);
        assert_eq!(s.apply_replicated(doc(2)).unwrap(), ApplyOutcome::Stale);
        assert_eq!(s.get("p/x").unwrap().revision, 3);
        assert_eq!(s.last_seq(), 1);
    }

    #[test]
    fn durable_across_reopen_and_compaction() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        {
            let s = Store::open(&path, StoreOptions::default()).unwrap();
            s.put("r1", DocKind::Recipe, json!({"v": 1}), None).unwrap();
            s.put("r1", DocKind::Recipe, json!({"v": 2}), Some(1)).unwrap();
            s.set_meta("checkpoint", json!(7)).unwrap();
        }
        let s = Store::open(&path, StoreOptions::default()).unwrap();
        assert_eq!(s.get("r1").unwrap().revision, 2);
        assert_eq!(s.get("r1").unwrap().body, json!({"v": 2}));
        assert_eq!(s.meta("checkpoint"), Some(json!(7)));
        s.compact().unwrap();
        s.put("r2", DocKind::Recipe, json!({}), None).unwrap();
        drop(s);
        let s = Store::open(&path, StoreOptions::default()).unwrap();
        assert_eq!(s.last_seq(), 3);
        assert_eq!(s.changes_since(0, &KindSet::all(), None).len(), 3);
        assert_eq!(s.get("r1").unwrap().body, json!({"v": 2}));
    }

    #[test]
    fn torn_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        {
            let s = Store::open(&path, StoreOptions::default()).unwrap();
            s.put("r1", DocKind::Recipe, json!({}), None).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"t\":\"doc\",\"seq\":2,").unwrap();
        drop(f);
        let s = Store::open(&path, StoreOptions::default()).unwrap();
        assert_eq!(s.last_seq(), 1);
        s.put("r2", DocKind::Recipe, json!({}), None).unwrap();
        drop(s);
        assert_eq!(Store::open(&path, StoreOptions::default()).unwrap().last_seq(), 2);
    }

    #[test]
    fn second_open_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        let s = Store::open(&path, StoreOptions::default()).unwrap();
        assert!(matches!(Store::open(&path, StoreOptions::default()), Err(StoreError::Locked(_))));
        s.compact().unwrap();
        assert!(matches!(Store::open(&path, StoreOptions::default()), Err(StoreError::Locked(_))));
        drop(s);
        Store::open(&path, StoreOptions::default()).unwrap();
    }

    #[test]
    fn bad_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.log");
        std::fs::write(&path, b"OCST\x09\n").unwrap();
        assert!(matches!(Store::open(&path, StoreOptions::default()), Err(StoreError::Version(9))));
    }

    #[test]
    fn runs_and_export() {
        let s = Store::in_memory();
        assert!(matches!(s.export_csv("nope", None), Err(StoreError::UnknownRun(_))));
        s.put_run_meta("r", json!({"recipe_id": "x"})).unwrap();
        let pts = vec![
            DataPoint { timestamp: 0, variable: Variable::AirTemperature, value: Some(22.0), stream: Stream::Measured, run_id: "r".into() },
            DataPoint { timestamp: 0, variable: Variable::AirTemperature, value: Some(25.0), stream: Stream::Desired, run_id: "r".into() },
        ];
        s.append_points("r", &pts).unwrap();
        let csv = String::from_utf8(s.export_csv("r", None).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 3);
        let measured = String::from_utf8(s.export_csv("r", Some(Stream::Measured)).unwrap()).unwrap();
        assert_eq!(measured.lines().count(), 2);
        assert_eq!(s.run_ids(), ["r"]);
    }
}
