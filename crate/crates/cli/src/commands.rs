use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};

use openchamber_core::control::live::{self, Pacing};
use openchamber_core::control::{run_recipe_with, Chamber, Controller};
use openchamber_core::datastore::{write_csv, KindSet, Store, StoreError, StoreOptions, Stream};
use openchamber_core::recipe::{parse_recipe, Recipe};
use openchamber_core::settings::Settings;
use openchamber_core::simchamber::scenario_preset;
use openchamber_core::syncproto::{ReplicationServer, Replicator, SyncError, SyncOptions};
use openchamber_net::{api_router, finish_router, replication_router, ApiState, HttpTransport, Router};

use crate::log::{info, log_warn};
use crate::{CloudArgs, ExportArgs, Failure, Outcome, ServeArgs, SimulateArgs, Speed, SyncArgs};

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn settings(config: Option<&Path>) -> Result<Settings, Failure> {
    Settings::resolve(config).context("configuration").map_err(invalid)
}

fn read_recipe(path: &Path) -> Result<Recipe, Failure> {
    let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_recipe(&raw).map_err(|e| invalid(anyhow!("invalid recipe {}: {} ({}): {e}", path.display(), e.name(), e.code())))
}

fn write_output(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        out.write_all(bytes)?;
        return Ok(out.flush()?);
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn store_error(e: StoreError) -> Failure {
    match e {
        StoreError::UnknownRun(_) => invalid(e),
        other => Failure::Runtime(other.into()),
    }
}

fn open_store(path: &Path) -> Result<Store, Failure> {
    Store::open(path, StoreOptions::default())
        .with_context(|| format!("opening store {}", path.display()))
        .map_err(Failure::Runtime)
}

fn store_path(flag: Option<PathBuf>, settings: &Settings) -> Option<PathBuf> {
    flag.or_else(|| settings.store_path.clone())
}

pub fn validate(file: &Path) -> Outcome {
    let recipe = read_recipe(file)?;
    println!("ok");
    info!("recipe valid", "id": recipe.id(), "operations": recipe.operations().len(), "duration": recipe.duration());
    Ok(())
}

pub fn simulate(config: Option<&Path>, args: SimulateArgs) -> Outcome {
    let mut s = settings(config)?;
    let recipe = read_recipe(&args.recipe)?;
    if let Some(p) = &args.preset {
        s.scenario = scenario_preset(p).map_err(invalid)?;
        s.preset = p.clone();
    }
    let seed = args.seed.unwrap_or(s.seed);
    let limit = match args.hours {
        Some(h) if h > 0.0 && h.is_finite() => (h * 3600.0).round() as u64,
        Some(h) => return Err(invalid(anyhow!("--hours must be positive, got {h}"))),
        None => recipe.duration(),
    };
    let mut chamber = Chamber::new(s.scenario.state, s.scenario.params, s.scenario.sensors, seed);
    let started = Instant::now();
    let mut pace = |elapsed: u64| {
        if let Speed::Factor(f) = args.speed {
            let due = Duration::from_secs_f64(elapsed as f64 / f);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                thread::sleep(wait);
            }
        }
    };
    let log = run_recipe_with(&recipe, &mut chamber, &s.control, limit, None, &mut pace)
        .context("simulation")
        .map_err(invalid)?;
    let csv = write_csv(&log.points);
    write_output(&args.out, &csv)?;
    info!(
        "simulation finished",
        "run_id": log.run_id,
        "preset": s.preset,
        "seed": seed,
        "ticks": log.ticks,
        "rows": log.points.len(),
        "stop": log.stop,
        "out": args.out,
        "wall_ms": started.elapsed().as_millis() as u64,
    );
    Ok(())
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn serve_router(rt: &tokio::runtime::Runtime, bind: &str, port: u16, router: Router, what: &str) -> Outcome {
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((bind, port))
            .await
            .with_context(|| format!("binding {bind}:{port}"))?;
        let addr = listener.local_addr()?;
        info!("listening", "service": what, "addr": addr.to_string(), "url": format!("http://{addr}"));
        openchamber_net::run(listener, router, shutdown_signal()).await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}

pub fn serve(config: Option<&Path>, args: ServeArgs) -> Outcome {
    let mut s = settings(config)?;
    if let Some(speed) = args.speed {
        s.speed = match speed {
            Speed::Max => None,
            Speed::Factor(f) => Some(f),
        };
    }
    let seed = args.seed.unwrap_or(s.seed);
    let store = Arc::new(match store_path(args.store, &s) {
        Some(p) => open_store(&p)?,
        None => {
            log_warn!("no store.path configured; telemetry and recipes stay in memory");
            Store::in_memory()
        }
    });
    let chamber = Chamber::new(s.scenario.state.clone(), s.scenario.params.clone(), s.scenario.sensors.clone(), seed);
    let ctl = Controller::new(chamber, s.control.clone()).context("controller configuration").map_err(invalid)?;
    let pacing = s.speed.map_or(Pacing::Max, Pacing::Speed);
    let (control, loop_thread) = live::spawn(ctl, store.clone(), pacing);
    info!("control loop started", "preset": s.preset, "seed": seed, "speed": s.speed, "store": store.path());

    let stop_sync = Arc::new(AtomicBool::new(false));
    let sync_thread = match (&s.sync_server, s.sync_interval_s) {
        (Some(server), Some(interval)) => Some(background_sync(&s, server, interval, store.clone(), stop_sync.clone())),
        _ => None,
    };

    let router = finish_router(api_router(ApiState::new(control.clone(), store)), s.token.clone());
    let rt = runtime()?;
    let served = serve_router(&rt, args.bind.as_deref().unwrap_or(&s.bind), args.port.unwrap_or(s.port), router, "api");
    stop_sync.store(true, Ordering::SeqCst);
    control.shutdown();
    let _ = loop_thread.join();
    if let Some(t) = sync_thread {
        let _ = t.join();
    }
    info!("stopped");
    served
}

fn background_sync(
    s: &Settings,
    server: &str,
    interval_s: u64,
    store: Arc<Store>,
    stop: Arc<AtomicBool>,
) -> thread::JoinHandle<()> {
    let mut options = SyncOptions::new(s.peer_id.clone(), server.to_string());
    options.pull_filter = s.pull_filter.clone();
    let transport = HttpTransport::new(server, s.token.clone());
    let replicator = Replicator::new(store, options);
    thread::spawn(move || {
        let mut next = Instant::now();
        while !stop.load(Ordering::SeqCst) {
            if Instant::now() >= next {
                match replicator.sync(&transport) {
                    Ok(r) => info!("sync", "pushed": r.pushed, "pulled": r.pulled, "conflicts": r.conflicts.len()),
                    Err(e) => log_warn!("sync failed", "error": e.to_string()),
                }
                next = Instant::now() + Duration::from_secs(interval_s);
            }
            thread::sleep(Duration::from_millis(200));
        }
    })
}

pub fn sync(config: Option<&Path>, args: SyncArgs) -> Outcome {
    let s = settings(config)?;
    let server = args
        .server
        .or_else(|| s.sync_server.clone())
        .ok_or_else(|| invalid(anyhow!("no server given (--server or sync.server)")))?;
    let path = store_path(args.store, &s)
        .ok_or_else(|| invalid(anyhow!("no store to sync (--store or store.path)")))?;
    let store = Arc::new(open_store(&path)?);
    let mut options = SyncOptions::new(args.peer.unwrap_or_else(|| s.peer_id.clone()), server.clone());
    options.pull_filter = match args.filter {
        Some(f) => f.parse::<KindSet>().map_err(|e| invalid(anyhow!(e)))?,
        None => s.pull_filter.clone(),
    };
    let transport = HttpTransport::new(&server, args.token.or(s.token));
    let report = Replicator::new(store, options).sync(&transport).map_err(|e| match e {
        SyncError::ProtocolVersionMismatch { .. } => invalid(e),
        other => Failure::Runtime(other.into()),
    })?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    info!("sync finished", "server": server, "pushed": report.pushed, "pulled": report.pulled, "conflicts": report.conflicts.len());
    Ok(())
}

pub fn cloud(config: Option<&Path>, args: CloudArgs) -> Outcome {
    let s = settings(config)?;
    let store = Arc::new(match store_path(args.store, &s) {
        Some(p) => open_store(&p)?,
        None => {
            log_warn!("no store.path configured; the cloud store stays in memory");
            Store::in_memory()
        }
    });
    let router = finish_router(replication_router(Arc::new(ReplicationServer::new(store))), s.token.clone());
    let rt = runtime()?;
    serve_router(&rt, args.bind.as_deref().unwrap_or(&s.bind), args.port.unwrap_or(s.port), router, "cloud")
}

pub fn export(config: Option<&Path>, args: ExportArgs) -> Outcome {
    let s = settings(config)?;
    let stream = args
        .stream
        .as_deref()
        .map(|x| x.parse::<Stream>().map_err(|e| invalid(anyhow!(e))))
        .transpose()?;
    let path = store_path(args.store, &s).ok_or_else(|| invalid(anyhow!("no store (--store or store.path)")))?;
    let store = open_store(&path)?;
    let csv = store.export_csv(&args.run, stream).map_err(store_error)?;
    write_output(&args.out, &csv)?;
    info!("exported", "run": args.run, "bytes": csv.len(), "out": args.out);
    Ok(())
}
