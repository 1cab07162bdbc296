//! HTTP faces of openchamber: the operator API served next to the control
//! loop, the replication endpoint run by the cloud store, and the blocking
//! client the chamber uses to sync against it.

pub mod api;
pub mod error;
pub mod replication;
pub mod transport;

use std::future::Future;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Request, State};
use axum::http::{header, HeaderName, Method};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use tokio::sync::oneshot;
use tower_http::cors::{Any, CorsLayer};

use openchamber_core::syncproto::VERSION_HEADER;

pub use api::{api_router, ApiState};
pub use axum::Router;
pub use error::{ApiError, ERROR_CODES};
pub use replication::replication_router;
pub use transport::HttpTransport;

/// Adds JSON 404/405 bodies, bearer-token checks and CORS to `router`.
/// `GET /health` and CORS preflights never need the token.
pub fn finish_router(router: Router, token: Option<String>) -> Router {
    let token: Option<Arc<str>> = token.map(Into::into);
    router
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async { ApiError::new(405, "method_not_allowed", "method not allowed here") })
        .layer(middleware::from_fn_with_state(token, require_token))
        .layer(cors())
}

fn cors() -> CorsLayer {
    let sync_header = HeaderName::from_static("x-sync-version");
    debug_assert!(sync_header.as_str().eq_ignore_ascii_case(VERSION_HEADER));
    CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST, Method::PATCH, Method::OPTIONS])
        .allow_headers([header::AUTHORIZATION, header::CONTENT_TYPE, sync_header.clone()])
        .expose_headers([sync_header, header::CONTENT_DISPOSITION])
}

fn same(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn require_token(State(token): State<Option<Arc<str>>>, req: Request, next: Next) -> Response {
    let Some(token) = token else {
        return next.run(req).await;
    };
    if req.method() == Method::OPTIONS || req.uri().path() == "/health" {
        return next.run(req).await;
    }
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(p) if same(p.as_bytes(), token.as_bytes()) => next.run(req).await,
        _ => ApiError::new(401, "unauthorized", "missing or invalid bearer token").into_response(),
    }
}

/// Serves `router` on `listener` until `shutdown` resolves.
pub async fn run(listener: tokio::net::TcpListener, router: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}

/// A router served from its own thread and runtime; stops on drop.
pub struct Server {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl Server {
    pub fn start(router: Router, addr: impl ToSocketAddrs) -> io::Result<Server> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::Builder::new().name(format!("http-{addr}")).spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                run(listener, router, async {
                    let _ = stopped.await;
                })
                .await
            })
        })?;
        Ok(Server { addr, stop: Some(stop), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting, lets in-flight requests finish, and joins.
    pub fn stop(mut self) -> io::Result<()> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.shutdown();
    }
}
