//! WebSocket front end for live classification.
//!
//! Clients connect to `/ws` and exchange one JSON message per text frame.
//! Each connection owns a [`Session`]; the model is shared read-only.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use repsense_core::model::{load_model, SavedModel};
use repsense_core::serving::DEFAULT_WINDOW_SIZE;
use repsense_core::{Outbound, Session};
use serde::Serialize;
use tokio::net::TcpListener;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub listen: SocketAddr,
    pub model: PathBuf,
    pub window: usize,
    /// Must equal the model's own value when given.
    pub max_seq_len: Option<usize>,
    /// Append-only classification log.
    pub log: Option<PathBuf>,
}

impl ServeOptions {
    pub fn new(listen: SocketAddr, model: impl Into<PathBuf>) -> Self {
        Self {
            listen,
            model: model.into(),
            window: DEFAULT_WINDOW_SIZE,
            max_seq_len: None,
            log: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    model: Arc<SavedModel>,
    window: usize,
    next_session: Arc<AtomicU64>,
    log: Option<Arc<Mutex<File>>>,
}

impl AppState {
    /// Loads and checks everything a server needs before it accepts clients.
    pub fn load(opts: &ServeOptions) -> anyhow::Result<Self> {
        let model = load_model(&opts.model)
            .with_context(|| format!("loading model {}", opts.model.display()))?;
        if let Some(n) = opts.max_seq_len {
            if n != model.config.max_seq_len {
                bail!(
                    "--max-seq-len {n} does not match the model's max_seq_len {}",
                    model.config.max_seq_len
                );
            }
        }
        let model = Arc::new(model);
        // fails early on a bad window size
        Session::new(0, model.clone(), opts.window)?;
        let log = match &opts.log {
            Some(path) => {
                let f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .with_context(|| format!("opening log {}", path.display()))?;
                Some(Arc::new(Mutex::new(f)))
            }
            None => None,
        };
        Ok(Self {
            model,
            window: opts.window,
            next_session: Arc::new(AtomicU64::new(1)),
            log,
        })
    }

    pub fn model(&self) -> &SavedModel {
        &self.model
    }
}

pub fn router(state: AppState) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(state)
}

/// Serves on an already bound listener until the process is stopped.
pub async fn serve_on(listener: TcpListener, state: AppState) -> anyhow::Result<()> {
    axum::serve(listener, router(state)).await?;
    Ok(())
}

/// Loads the model, binds `opts.listen` and serves until Ctrl-C.
pub async fn run(opts: ServeOptions) -> anyhow::Result<()> {
    let state = AppState::load(&opts)?;
    run_with(state, opts.listen).await
}

/// Binds `listen` and serves `state` until Ctrl-C.
pub async fn run_with(state: AppState, listen: SocketAddr) -> anyhow::Result<()> {
    let listener = TcpListener::bind(listen)
        .await
        .with_context(|| format!("binding {listen}"))?;
    eprintln!("listening on ws://{}/ws", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// [`run_with`] on a fresh multi-threaded runtime.
pub fn run_blocking(state: AppState, listen: SocketAddr) -> anyhow::Result<()> {
    tokio::runtime::Runtime::new()?.block_on(run_with(state, listen))
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(mut socket: WebSocket, state: AppState) {
    let id = state.next_session.fetch_add(1, Ordering::Relaxed);
    let mut session = match Session::new(id, state.model.clone(), state.window) {
        Ok(s) => s,
        Err(_) => return,
    };
    while let Some(Ok(msg)) = socket.recv().await {
        let reply = match msg {
            Message::Text(text) => session.handle_text(text.as_str()),
            Message::Binary(_) => Some(Outbound::Error {
                reason: "binary messages are not supported".into(),
            }),
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => None,
        };
        let Some(reply) = reply else { continue };
        if let (Some(log), Outbound::Classification { .. }) = (&state.log, &reply) {
            write_log(log, id, &reply);
        }
        let text = serde_json::to_string(&reply).expect("outbound messages serialize");
        if socket.send(Message::Text(text.into())).await.is_err() {
            break;
        }
    }
}

#[derive(Serialize)]
struct LogLine<'a> {
    timestamp: f64,
    session: u64,
    #[serde(flatten)]
    reply: &'a Outbound,
}

fn write_log(log: &Mutex<File>, session: u64, reply: &Outbound) {
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let line = serde_json::to_string(&LogLine {
        timestamp,
        session,
        reply,
    })
    .expect("log lines serialize");
    if let Ok(mut f) = log.lock() {
        let _ = writeln!(f, "{line}");
    }
}
