use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Barrier};

use openchamber_core::datastore::{DataPoint, DocKind, Document, KindSet, Store, StoreOptions, Stream};
use openchamber_core::recipe::{parse_recipe, recipe_to_value, SAMPLE_RECIPE_JSON};
use openchamber_core::syncproto::{
    ChangesPage, CheckpointRequest, CheckpointResponse, Direction, Health, LocalTransport, PushAck, PushBatch,
    ReplicationServer, Replicator, SyncError, SyncOptions, SyncTransport,
};
use openchamber_core::Variable;
use proptest::prelude::*;
use serde_json::json;

fn mem() -> Arc<Store> {
    Arc::new(Store::in_memory_with(StoreOptions { sync: false, capacity_bytes: None }))
}

fn points(run: &str, batch: u64) -> Vec<DataPoint> {
    let mut out = Vec::new();
    for v in [Variable::AirTemperature, Variable::WaterLevel] {
        for stream in [Stream::Measured, Stream::Desired] {
            out.push(DataPoint {
                timestamp: batch * 10,
                variable: v,
                value: Some(batch as f64 * 0.1),
                stream,
                run_id: run.into(),
            });
        }
    }
    out
}

/// A chamber store with one run of `batches` telemetry batches, its run
/// metadata and a few locally written recipes.
fn client_store(peer: &str, batches: u64) -> Arc<Store> {
    let s = mem();
    let run = format!("run-{peer}");
    for b in 0..batches {
        s.append_points(&run, &points(&run, b)).unwrap();
    }
    s.put_run_meta(&run, json!({"recipe_id": "r", "status": "ended"})).unwrap();
    for i in 0..5 {
        s.put(&format!("local-{peer}-{i}"), DocKind::Recipe, json!({"n": i}), None).unwrap();
    }
    s
}

fn server_store() -> Arc<Store> {
    let s = mem();
    let sample = recipe_to_value(&parse_recipe(SAMPLE_RECIPE_JSON.as_bytes()).unwrap());
    s.put("7ca3134e91aec96acd17a74764000bb8", DocKind::Recipe, sample, None).unwrap();
    for i in 0..40 {
        s.put(&format!("cloud-{i}"), DocKind::Recipe, json!({"i": i}), None).unwrap();
    }
    s.put("cloud-batch", DocKind::DatapointBatch, json!({"run_id": "elsewhere", "points": []}), None).unwrap();
    s
}

fn snapshot(s: &Store) -> BTreeMap<String, Document> {
    let mut out = BTreeMap::new();
    for kind in [DocKind::Recipe, DocKind::DatapointBatch, DocKind::RunMeta] {
        for d in s.list(kind) {
            out.insert(d.id.clone(), d);
        }
    }
    out
}

fn opts(peer: &str) -> SyncOptions {
    SyncOptions::new(peer, "cloud")
}

fn assert_superset(server: &Store, peer: &str, before: &BTreeMap<String, Document>) {
    for (id, doc) in before {
        if doc.origin.is_some() {
            continue;
        }
        let remote = server.get(&format!("{peer}/{id}")).unwrap_or_else(|| panic!("{peer}/{id} missing on server"));
        assert_eq!((remote.revision, &remote.body, remote.kind), (doc.revision, &doc.body, doc.kind));
    }
}

fn assert_filter_sound(client: &Store, filter: &KindSet) {
    for doc in snapshot(client).values() {
        assert!(doc.origin.is_none() || filter.contains(doc.kind), "{} leaked into client", doc.id);
    }
}

fn assert_feed_clean(s: &Store) {
    let feed = s.changes_since(0, &KindSet::all(), None);
    let seqs: Vec<u64> = feed.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=seqs.len() as u64).collect::<Vec<_>>(), "feed has gaps");
    let mut seen = BTreeSet::new();
    for e in &feed {
        assert!(seen.insert((e.id.clone(), e.revision)), "duplicate {}@{}", e.id, e.revision);
    }
}

#[test]
fn three_clients_ten_thousand_documents() {
    let server = Arc::new(ReplicationServer::new(server_store()));
    let transport = LocalTransport::new(server.clone());
    let peers = ["alpha", "bravo", "charlie"];
    let clients: Vec<_> = peers.iter().map(|p| client_store(p, 3_400)).collect();
    let total: usize = clients.iter().map(|c| c.len()).sum();
    assert!(total >= 10_000, "{total}");
    let before: Vec<_> = clients.iter().map(|c| snapshot(c)).collect();

    for (peer, store) in peers.iter().zip(&clients) {
        let r = Replicator::new(store.clone(), opts(peer));
        let report = r.sync(&transport).unwrap();
        assert_eq!(report.pushed, store.len() - report.pulled);
        assert!(report.conflicts.is_empty());
    }
    // a second pass picks up what the later clients pushed
    for (peer, store) in peers.iter().zip(&clients) {
        Replicator::new(store.clone(), opts(peer)).sync(&transport).unwrap();
    }
    for ((peer, store), before) in peers.iter().zip(&clients).zip(&before) {
        assert_superset(server.store(), peer, before);
        assert_filter_sound(store, &KindSet::only([DocKind::Recipe]));
        // every other peer's recipes arrived, none of their telemetry
        for other in peers.iter().filter(|o| *o != peer) {
            assert!(store.get(&format!("{other}/local-{other}-0")).is_some());
            assert!(store.get(&format!("{other}/run:run-{other}")).is_none());
        }
        assert!(store.get("cloud-batch").is_none());
        assert!(store.get("cloud-39").is_some());
    }
    assert_feed_clean(server.store());

    // converged: nothing moves on either side
    let server_seq = server.store().last_seq();
    for (peer, store) in peers.iter().zip(&clients) {
        let seq = store.last_seq();
        let report = Replicator::new(store.clone(), opts(peer)).sync(&transport).unwrap();
        assert_eq!((report.pushed, report.pulled), (0, 0), "{peer}");
        assert_eq!(store.last_seq(), seq);
    }
    assert_eq!(server.store().last_seq(), server_seq);

    // telemetry survives the trip bit for bit
    for (peer, store) in peers.iter().zip(&clients) {
        let run = format!("run-{peer}");
        assert_eq!(server.store().export_csv(&run, None).unwrap(), store.export_csv(&run, None).unwrap());
    }
}

#[test]
fn fresh_client_pulls_no_telemetry() {
    let server = Arc::new(ReplicationServer::new(server_store()));
    let transport = LocalTransport::new(server.clone());
    Replicator::new(client_store("alpha", 300), opts("alpha")).sync(&transport).unwrap();
    let fresh = mem();
    let report = Replicator::new(fresh.clone(), opts("fresh")).sync(&transport).unwrap();
    assert_eq!(report.pushed, 0);
    assert!(report.pulled > 0);
    assert!(fresh.list(DocKind::DatapointBatch).is_empty());
    assert!(fresh.list(DocKind::RunMeta).is_empty());
    assert_eq!(fresh.list(DocKind::Recipe).len(), 41 + 5);

    let everything = mem();
    let mut o = opts("everything");
    o.pull_filter = KindSet::all();
    Replicator::new(everything.clone(), o).sync(&transport).unwrap();
    assert_eq!(everything.list(DocKind::DatapointBatch).len(), 301);
}

#[test]
fn two_clients_disjoint_runs_interleave_without_gaps() {
    let server = Arc::new(ReplicationServer::new(mem()));
    let transport = LocalTransport::new(server.clone());
    let a = client_store("a", 250);
    let b = client_store("b", 180);
    for round in 0..3 {
        for (p, s) in [("a", &a), ("b", &b)] {
            let run = format!("run-{p}");
            for k in 0..20 {
                s.append_points(&run, &points(&run, 1000 + round * 20 + k)).unwrap();
            }
            Replicator::new(s.clone(), opts(p)).sync(&transport).unwrap();
        }
    }
    assert_feed_clean(server.store());
    // oracle: union of both clients' exports
    for (p, s) in [("a", &a), ("b", &b)] {
        let run = format!("run-{p}");
        assert_eq!(server.store().export_csv(&run, None).unwrap(), s.export_csv(&run, None).unwrap());
    }
    // each client also holds the other's five recipes
    assert_eq!(server.store().len(), a.len() + b.len() - 2 * 5);
}

#[test]
fn pull_conflict_keeps_local_copy() {
    let server_side = server_store();
    let server = Arc::new(ReplicationServer::new(server_side.clone()));
    let transport = LocalTransport::new(server.clone());
    let client = mem();
    client.put("cloud-3", DocKind::Recipe, json!({"mine": true}), None).unwrap();
    client.put("cloud-4", DocKind::Recipe, json!({"i": 4}), None).unwrap();
    let r = Replicator::new(client.clone(), opts("alpha"));
    let report = r.sync(&transport).unwrap();
    // identical content is not a conflict
    assert_eq!(report.conflicts.len(), 1);
    let c = &report.conflicts[0];
    assert_eq!(c.id, "cloud-3");
    assert_eq!(c.preserved_as, "cloud-3~conflict-1");
    assert_eq!(client.get("cloud-3").unwrap().body, json!({"i": 3}));
    assert_eq!(client.get("cloud-3~conflict-1").unwrap().body, json!({"mine": true}));
    // the preserved copy already reached the server in the same round
    assert!(server_side.get("alpha/cloud-3~conflict-1").is_some());
    let again = r.sync(&transport).unwrap();
    assert_eq!((again.pushed, again.pulled, again.conflicts.len()), (0, 0, 0));

    // a later server edit replaces the pulled copy without conflict
    server_side.put("cloud-3", DocKind::Recipe, json!({"i": 33}), Some(1)).unwrap();
    let third = r.sync(&transport).unwrap();
    assert_eq!((third.pulled, third.conflicts.len()), (1, 0));
    assert_eq!(client.get("cloud-3").unwrap().body, json!({"i": 33}));
}

const PEERS: [&str; 3] = ["alpha", "bravo", "charlie"];

type World = (BTreeMap<String, Document>, Vec<BTreeMap<String, Document>>);

/// Three clients sync in turn, then once more each. Whenever a call fails,
/// the chamber restarts with a fresh replicator and tries again.
fn scenario(batches: u64, transport: &dyn SyncTransport, inner: &LocalTransport, server: &ReplicationServer) -> World {
    let clients: Vec<_> = PEERS.iter().map(|p| client_store(p, batches)).collect();
    for _round in 0..2 {
        for (peer, store) in PEERS.iter().zip(&clients) {
            let mut restarts = 0;
            loop {
                let cps = (pull_cp(store), push_cp(store));
                let result = Replicator::new(store.clone(), opts(peer)).sync(transport);
                assert!(pull_cp(store) >= cps.0 && push_cp(store) >= cps.1, "checkpoint moved backwards");
                match result {
                    Ok(_) => break,
                    Err(SyncError::NetworkUnavailable(_)) => restarts += 1,
                    Err(e) => panic!("{e}"),
                }
                assert!(restarts < 100_000);
            }
        }
    }
    let _ = inner;
    assert_feed_clean(server.store());
    (snapshot(server.store()), clients.iter().map(|c| snapshot(c)).collect())
}

fn push_cp(s: &Store) -> u64 {
    s.meta("sync:cloud:push").and_then(|v| v.as_u64()).unwrap_or(0)
}

fn pull_cp(s: &Store) -> u64 {
    s.meta("sync:cloud:pull").and_then(|v| v.as_u64()).unwrap_or(0)
}

fn reference(batches: u64) -> (World, usize) {
    let server = ReplicationServer::new(server_store());
    let inner = LocalTransport::new(Arc::new(server));
    let counting = Faulty { inner: &inner, calls: Cell::new(0), fail_at: None, after: false };
    let world = scenario(batches, &counting, &inner, &inner.server);
    (world, counting.calls.get())
}

/// Fails the `fail_at`-th call. `after` decides whether the request reached
/// the server before the connection dropped.
struct Faulty<'a> {
    inner: &'a LocalTransport,
    calls: Cell<usize>,
    fail_at: Option<usize>,
    after: bool,
}

impl Faulty<'_> {
    fn gate<T>(&self, f: impl FnOnce() -> Result<T, SyncError>) -> Result<T, SyncError> {
        let n = self.calls.get();
        self.calls.set(n + 1);
        if self.fail_at == Some(n) {
            if self.after {
                let _ = f();
            }
            return Err(SyncError::NetworkUnavailable("injected".into()));
        }
        f()
    }
}

impl SyncTransport for Faulty<'_> {
    fn health(&self) -> Result<Health, SyncError> {
        self.gate(|| self.inner.health())
    }
    fn push(&self, batch: &PushBatch) -> Result<PushAck, SyncError> {
        self.gate(|| self.inner.push(batch))
    }
    fn changes(&self, peer: &str, since: u64, filter: &KindSet, limit: usize) -> Result<ChangesPage, SyncError> {
        self.gate(|| self.inner.changes(peer, since, filter, limit))
    }
    fn checkpoint(&self, request: &CheckpointRequest) -> Result<CheckpointResponse, SyncError> {
        self.gate(|| self.inner.checkpoint(request))
    }
}

/// Crashes once at every protocol boundary: each distinct push batch,
/// changes page and checkpoint call fails on its first attempt.
struct CrashEverywhere<'a> {
    inner: &'a LocalTransport,
    seen: std::cell::RefCell<BTreeSet<String>>,
    after: bool,
    /// Record boundaries without failing.
    dry: bool,
}

impl CrashEverywhere<'_> {
    fn gate<T>(&self, key: String, f: impl FnOnce() -> Result<T, SyncError>) -> Result<T, SyncError> {
        if self.seen.borrow_mut().insert(key) && !self.dry {
            if self.after {
                let _ = f();
            }
            return Err(SyncError::NetworkUnavailable("injected".into()));
        }
        f()
    }

}

impl SyncTransport for CrashEverywhere<'_> {
    fn health(&self) -> Result<Health, SyncError> {
        self.inner.health()
    }
    fn push(&self, batch: &PushBatch) -> Result<PushAck, SyncError> {
        self.gate(format!("push {} {}", batch.peer, batch.last_seq), || self.inner.push(batch))
    }
    fn changes(&self, peer: &str, since: u64, filter: &KindSet, limit: usize) -> Result<ChangesPage, SyncError> {
        self.gate(format!("changes {peer} {since}"), || self.inner.changes(peer, since, filter, limit))
    }
    fn checkpoint(&self, request: &CheckpointRequest) -> Result<CheckpointResponse, SyncError> {
        let key = format!("checkpoint {} {} {:?}", request.peer, request.direction, request.sequence);
        self.gate(key, || self.inner.checkpoint(request))
    }
}

#[test]
fn crash_before_and_after_every_call_ten_thousand_documents() {
    let batches = 3_400;
    let inner = LocalTransport::new(Arc::new(ReplicationServer::new(server_store())));
    let clean = CrashEverywhere { inner: &inner, seen: Default::default(), after: false, dry: true };
    let expected = scenario(batches, &clean, &inner, &inner.server);
    let boundaries = clean.seen.into_inner();
    assert!(expected.0.len() >= 10_000);
    assert!(boundaries.len() > 100);
    for after in [false, true] {
        let inner = LocalTransport::new(Arc::new(ReplicationServer::new(server_store())));
        let t = CrashEverywhere { inner: &inner, seen: Default::default(), after, dry: false };
        let world = scenario(batches, &t, &inner, &inner.server);
        assert!(t.seen.borrow().is_superset(&boundaries), "some boundary was never crashed");
        assert!(world.0 == expected.0, "server differs (after = {after})");
        assert!(world.1 == expected.1, "clients differ (after = {after})");
    }
}

#[test]
fn single_crash_at_each_call() {
    let batches = 300;
    let (expected, calls) = reference(batches);
    for fail_at in 0..calls {
        for after in [false, true] {
            let inner = LocalTransport::new(Arc::new(ReplicationServer::new(server_store())));
            let t = Faulty { inner: &inner, calls: Cell::new(0), fail_at: Some(fail_at), after };
            let world = scenario(batches, &t, &inner, &inner.server);
            assert!(world.0 == expected.0, "server differs after crash at call {fail_at} (after = {after})");
            assert!(world.1 == expected.1, "client differs after crash at call {fail_at} (after = {after})");
        }
    }
}

/// Fails calls according to a schedule; the client keeps retrying.
struct Flaky<'a> {
    inner: &'a LocalTransport,
    schedule: Vec<bool>,
    calls: Cell<usize>,
    corrupt: bool,
}

impl Flaky<'_> {
    fn down(&self) -> bool {
        let n = self.calls.get();
        self.calls.set(n + 1);
        self.schedule.get(n).copied().unwrap_or(false)
    }
}

impl SyncTransport for Flaky<'_> {
    fn health(&self) -> Result<Health, SyncError> {
        if self.down() { Err(SyncError::NetworkUnavailable("down".into())) } else { self.inner.health() }
    }
    fn push(&self, batch: &PushBatch) -> Result<PushAck, SyncError> {
        if self.down() {
            return Err(SyncError::NetworkUnavailable("down".into()));
        }
        if self.corrupt && self.calls.get() % 3 == 0 {
            let mut bad = batch.clone();
            bad.checksum ^= 1;
            return self.inner.push(&bad);
        }
        self.inner.push(batch)
    }
    fn changes(&self, peer: &str, since: u64, filter: &KindSet, limit: usize) -> Result<ChangesPage, SyncError> {
        if self.down() {
            return Err(SyncError::NetworkUnavailable("down".into()));
        }
        let mut page = self.inner.changes(peer, since, filter, limit)?;
        if self.corrupt && self.calls.get() % 3 == 0 && !page.results.is_empty() {
            page.results.pop();
        }
        Ok(page)
    }
    fn checkpoint(&self, request: &CheckpointRequest) -> Result<CheckpointResponse, SyncError> {
        if self.down() { Err(SyncError::NetworkUnavailable("down".into())) } else { self.inner.checkpoint(request) }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoints_monotone_under_failures(schedule in proptest::collection::vec(proptest::bool::weighted(0.2), 0..400), corrupt in any::<bool>()) {
        let server = Arc::new(ReplicationServer::new(server_store()));
        let inner = LocalTransport::new(server.clone());
        let store = client_store("alpha", 900);
        let flaky = Flaky { inner: &inner, schedule, calls: Cell::new(0), corrupt };
        let r = Replicator::new(store.clone(), opts("alpha"));
        let mut last = (0, 0);
        let mut attempts = 0;
        loop {
            attempts += 1;
            prop_assert!(attempts < 10_000);
            let result = r.sync(&flaky);
            let now = (r.local_checkpoint(Direction::Push), r.local_checkpoint(Direction::Pull));
            prop_assert!(now.0 >= last.0 && now.1 >= last.1);
            last = now;
            match result {
                Ok(_) => break,
                Err(SyncError::NetworkUnavailable(_) | SyncError::ChecksumMismatch { .. }) => continue,
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
        let before = client_store("alpha", 900);
        assert_superset(server.store(), "alpha", &snapshot(&before));
        assert_feed_clean(server.store());
    }
}

#[test]
fn unreachable_server_leaves_client_untouched() {
    struct Down;
    impl SyncTransport for Down {
        fn health(&self) -> Result<Health, SyncError> {
            Err(SyncError::NetworkUnavailable("connection refused".into()))
        }
        fn push(&self, _: &PushBatch) -> Result<PushAck, SyncError> {
            unreachable!()
        }
        fn changes(&self, _: &str, _: u64, _: &KindSet, _: usize) -> Result<ChangesPage, SyncError> {
            unreachable!()
        }
        fn checkpoint(&self, _: &CheckpointRequest) -> Result<CheckpointResponse, SyncError> {
            unreachable!()
        }
    }
    let store = client_store("alpha", 10);
    let seq = store.last_seq();
    let err = Replicator::new(store.clone(), opts("alpha")).sync(&Down).unwrap_err();
    assert!(matches!(err, SyncError::NetworkUnavailable(_)));
    assert_eq!(store.last_seq(), seq);
    assert!(store.meta("sync:cloud:push").is_none());
}

#[test]
fn version_mismatch_is_rejected() {
    let server = Arc::new(ReplicationServer::new(mem()));
    let mut transport = LocalTransport::new(server);
    transport.version = 2;
    let store = client_store("alpha", 3);
    let err = Replicator::new(store.clone(), opts("alpha")).sync(&transport).unwrap_err();
    assert!(matches!(err, SyncError::ProtocolVersionMismatch { .. }), "{err:?}");
}

#[test]
fn one_sync_at_a_time() {
    struct Slow<'a> {
        inner: LocalTransport,
        entered: &'a Barrier,
        release: &'a Barrier,
    }
    impl SyncTransport for Slow<'_> {
        fn health(&self) -> Result<Health, SyncError> {
            self.entered.wait();
            self.release.wait();
            self.inner.health()
        }
        fn push(&self, b: &PushBatch) -> Result<PushAck, SyncError> {
            self.inner.push(b)
        }
        fn changes(&self, p: &str, s: u64, f: &KindSet, l: usize) -> Result<ChangesPage, SyncError> {
            self.inner.changes(p, s, f, l)
        }
        fn checkpoint(&self, r: &CheckpointRequest) -> Result<CheckpointResponse, SyncError> {
            self.inner.checkpoint(r)
        }
    }
    let (entered, release) = (Barrier::new(2), Barrier::new(2));
    let slow = Slow { inner: LocalTransport::new(Arc::new(ReplicationServer::new(mem()))), entered: &entered, release: &release };
    let r = Replicator::new(client_store("alpha", 3), opts("alpha"));
    std::thread::scope(|s| {
        let first = s.spawn(|| r.sync(&slow));
        entered.wait();
        assert!(matches!(r.sync(&slow.inner), Err(SyncError::Busy)));
        release.wait();
        first.join().unwrap().unwrap();
    });
}

