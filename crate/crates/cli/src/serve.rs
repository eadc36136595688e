//! WebSocket game service. Each connection owns one session; the socket
//! loop interleaves client frames with ticks at the cycle cadence.

use std::path::PathBuf;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use dfa_fusion::config::Config;
use dfa_fusion::game::{Connection, ServerMessage};
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

#[derive(Debug, Clone)]
pub struct ServeState {
    pub config: Config,
    pub seed: u64,
    pub tick: Duration,
    pub static_dir: PathBuf,
}

pub fn router(state: ServeState) -> Router {
    let assets = ServeDir::new(&state.static_dir);
    Router::new()
        .route("/ws", get(upgrade))
        .fallback_service(assets)
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: ServeState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<ServeState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| session(socket, state))
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(msg.to_json())).await.is_ok()
}

async fn session(mut socket: WebSocket, state: ServeState) {
    let mut conn = match Connection::new(state.config, state.seed) {
        Ok(c) => c,
        Err(e) => {
            let _ = send(&mut socket, &ServerMessage::Error { message: e.to_string() }).await;
            return;
        }
    };
    let mut ticker = tokio::time::interval(state.tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    loop {
        tokio::select! {
            frame = socket.recv() => {
                let replies = match frame {
                    Some(Ok(Message::Text(text))) => conn.handle_text(&text),
                    Some(Ok(Message::Binary(_))) => vec![ServerMessage::Error { message: "expected a text frame".into() }],
                    Some(Ok(Message::Close(_))) | Some(Err(_)) | None => return,
                    Some(Ok(_)) => Vec::new(),
                };
                for r in &replies {
                    if !send(&mut socket, r).await {
                        return;
                    }
                }
            }
            _ = ticker.tick() => {
                let out = match conn.tick() {
                    Ok(out) => out,
                    Err(e) => {
                        let _ = send(&mut socket, &ServerMessage::Error { message: e.to_string() }).await;
                        return;
                    }
                };
                for m in &out {
                    if !send(&mut socket, m).await {
                        return;
                    }
                }
            }
        }
    }
}
