use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{ClientContext, Site};
use crate::error::{Error, Result};
use crate::harness::SimClock;

struct ServerState {
    site: Arc<Site>,
    clock: SimClock,
}

/// A running simulator. Dropping the handle stops the server.
pub struct ServerHandle {
    addr: SocketAddr,
    site: Arc<Site>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Value for the harness `proxy` setting.
    pub fn proxy_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn site(&self) -> &Arc<Site> {
        &self.site
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let abort = task.abort_handle();
            if tokio::time::timeout(Duration::from_secs(2), task).await.is_err() {
                abort.abort();
            }
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            task.abort();
        }
    }
}

/// Host of a proxied (absolute-form) or direct request, without port.
fn request_host(req: &Request) -> String {
    req.uri()
        .host()
        .map(str::to_string)
        .or_else(|| {
            req.headers()
                .get(header::HOST)
                .and_then(|h| h.to_str().ok())
                .map(|h| h.split(':').next().unwrap_or(h).to_string())
        })
        .unwrap_or_default()
}

async fn handle(State(state): State<Arc<ServerState>>, req: Request) -> Response {
    if req.method() != axum::http::Method::GET {
        return StatusCode::METHOD_NOT_ALLOWED.into_response();
    }
    let host = request_host(&req);
    let path = req.uri().path().to_string();
    let user_agent = req
        .headers()
        .get(header::USER_AGENT)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();
    if let Some(ms) = state.site.stall_ms(&host, &path) {
        tokio::time::sleep(Duration::from_millis(ms)).await;
    }
    let ctx = ClientContext {
        user_agent,
        privileged: false,
        sim_time: state.clock.sim_now_ms(),
    };
    let rendered = state.site.handle(&host, &path, &ctx);
    let status = StatusCode::from_u16(rendered.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut response = (status, rendered.html).into_response();
    response.headers_mut().insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("text/html; charset=utf-8"),
    );
    response
}

/// Starts serving `site` on `addr` (port 0 picks a free port). Simulated
/// time comes from `clock`.
pub async fn serve(site: Arc<Site>, clock: SimClock, addr: SocketAddr) -> Result<ServerHandle> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Http(format!("cannot bind simulator to {addr}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Error::Http(format!("cannot read bound address: {e}")))?;
    let state = Arc::new(ServerState { site: Arc::clone(&site), clock });
    let app = Router::new().fallback(handle).with_state(state);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let result = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
        if let Err(e) = result {
            log::error!("simulator server stopped: {e}");
        }
    });
    Ok(ServerHandle {
        addr,
        site,
        shutdown: Some(tx),
        task: Some(task),
    })
}
