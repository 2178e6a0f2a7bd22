//! WebSocket transport: each accepted connection gets its own session and episode.

use std::sync::Arc;

use anyhow::{bail, Context, Result};
use futures_util::{SinkExt, StreamExt};
use helpnav_core::env::NavEnv;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinSet;
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{ClientMsg, ServerMsg};
use crate::session::{run_session, Inbound, Policies, SessionConfig, SessionError, SessionOutcome};

const CHANNEL_DEPTH: usize = 64;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub session: SessionConfig,
    /// Stop accepting after this many connections and wait for their sessions.
    pub max_sessions: Option<usize>,
    /// Session `i` uses generator seed `seed + i`.
    pub seed: u64,
}

#[derive(Debug)]
pub struct SessionReport {
    pub index: usize,
    pub map_id: String,
    pub outcome: Result<SessionOutcome, SessionError>,
}

pub async fn bind(address: &str) -> Result<TcpListener> {
    TcpListener::bind(address)
        .await
        .with_context(|| format!("cannot bind {address}"))
}

/// Accepts connections on `listener`, assigning episodes round-robin. Returns once
/// `max_sessions` sessions have finished; runs until the process stops otherwise.
pub async fn serve(
    listener: TcpListener,
    envs: Vec<NavEnv>,
    policies: Arc<Policies>,
    cfg: Arc<ServerConfig>,
) -> Result<Vec<SessionReport>> {
    if envs.is_empty() {
        bail!("no episodes to serve");
    }
    let mut tasks = JoinSet::new();
    let mut index = 0;
    while cfg.max_sessions.is_none_or(|max| index < max) {
        let (stream, peer) = listener.accept().await.context("accepting a connection")?;
        let env = envs[index % envs.len()].clone();
        let (policies, cfg) = (policies.clone(), cfg.clone());
        let i = index;
        tasks.spawn(async move {
            let map_id = env.spec().map_id.clone();
            let outcome = handle_connection(stream, env, &policies, &cfg.session, cfg.seed.wrapping_add(i as u64)).await;
            match &outcome {
                Ok(o) => eprintln!(
                    "session {i} ({peer}, {map_id}): {} steps, success {}",
                    o.trace.steps.len(),
                    o.trace.footer.as_ref().is_some_and(|f| f.result.success)
                ),
                Err(e) => eprintln!("session {i} ({peer}, {map_id}): {e}"),
            }
            SessionReport {
                index: i,
                map_id,
                outcome,
            }
        });
        index += 1;
    }
    let mut reports = Vec::new();
    while let Some(r) = tasks.join_next().await {
        reports.push(r.context("session task panicked")?);
    }
    reports.sort_by_key(|r| r.index);
    Ok(reports)
}

/// Runs one session over an accepted TCP stream.
pub async fn handle_connection(
    stream: TcpStream,
    env: NavEnv,
    policies: &Policies,
    cfg: &SessionConfig,
    seed: u64,
) -> Result<SessionOutcome, SessionError> {
    let ws = tokio_tungstenite::accept_async(stream)
        .await
        .map_err(|e| SessionError::Internal(anyhow::anyhow!("WebSocket handshake failed: {e}")))?;
    let (mut sink, mut source) = ws.split();
    let (in_tx, mut in_rx) = mpsc::channel(CHANNEL_DEPTH);
    let (out_tx, mut out_rx) = mpsc::channel::<ServerMsg>(CHANNEL_DEPTH);
    let reader = tokio::spawn(async move {
        while let Some(frame) = source.next().await {
            let inbound = match frame {
                Ok(Message::Text(t)) => match ClientMsg::parse(t.as_str()) {
                    Ok(m) => Inbound::Message(m),
                    Err(e) => Inbound::Malformed(e),
                },
                Ok(Message::Binary(_)) => Inbound::Malformed("binary frames are not part of the protocol".into()),
                Ok(Message::Ping(_) | Message::Pong(_) | Message::Frame(_)) => continue,
                Ok(Message::Close(_)) | Err(_) => break,
            };
            if in_tx.send(inbound).await.is_err() {
                return;
            }
        }
        let _ = in_tx.send(Inbound::Closed).await;
    });
    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            let text = serde_json::to_string(&msg).expect("server messages always serialize");
            if sink.send(Message::text(text)).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });
    let outcome = run_session(env, policies, cfg, seed, &mut in_rx, &out_tx).await;
    drop(out_tx);
    let _ = writer.await;
    reader.abort();
    outcome
}
