//! Websocket front end. Each connection gets its own task that owns a
//! [`Connection`]; a reader task forwards client frames over a channel and the
//! owner interleaves them with engine ticks.

use std::net::SocketAddr;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use sa_core::wire::ServerMessage;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio::time::{sleep_until, Instant};

use crate::connection::{Connection, ConnectionOptions};

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub connection: ConnectionOptions,
    /// Wall-clock tick period; `None` runs in real time (one `dt` per tick).
    pub tick_period: Option<Duration>,
}

pub fn router(opts: ServeOptions) -> Router {
    Router::new()
        .route("/ws", get(upgrade))
        .route("/health", get(|| async { "ok" }))
        .with_state(opts)
}

pub async fn serve(listener: TcpListener, opts: ServeOptions) -> std::io::Result<()> {
    axum::serve(listener, router(opts))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

async fn upgrade(ws: WebSocketUpgrade, State(opts): State<ServeOptions>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| run_connection(socket, opts))
}

async fn send_all(
    sink: &mut (impl SinkExt<Message, Error = axum::Error> + Unpin),
    msgs: Vec<ServerMessage>,
) -> Result<(), axum::Error> {
    for m in msgs {
        sink.send(Message::Text(m.to_text().into())).await?;
    }
    Ok(())
}

async fn run_connection(socket: WebSocket, opts: ServeOptions) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::channel::<String>(256);
    let reader = tokio::spawn(async move {
        while let Some(Ok(frame)) = stream.next().await {
            let text = match frame {
                Message::Text(t) => t.to_string(),
                Message::Binary(_) => r#"{"kind":"binary"}"#.to_owned(),
                Message::Close(_) => break,
                _ => continue,
            };
            if tx.send(text).await.is_err() {
                break;
            }
        }
    });

    let mut conn = Connection::new(opts.connection);
    let period = |c: &Connection| opts.tick_period.unwrap_or_else(|| c.tick_period());
    let mut next_tick = Instant::now() + period(&conn);
    loop {
        tokio::select! {
            frame = rx.recv() => {
                let Some(text) = frame else { break };
                let was_running = conn.is_running();
                let replies = conn.handle_text(&text);
                if !was_running && conn.is_running() {
                    next_tick = Instant::now() + period(&conn);
                }
                if send_all(&mut sink, replies).await.is_err() {
                    break;
                }
            }
            _ = sleep_until(next_tick) => {
                next_tick += period(&conn);
                if conn.is_running() {
                    let msgs = conn.tick();
                    if send_all(&mut sink, msgs).await.is_err() {
                        break;
                    }
                } else {
                    next_tick = Instant::now() + period(&conn);
                }
            }
        }
    }
    reader.abort();
    tracing::debug!("connection closed");
}
