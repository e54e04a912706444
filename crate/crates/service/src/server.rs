//! Network front end: one session per connection, NDJSON over raw TCP and
//! the same messages as WebSocket text frames.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc as std_mpsc, Arc};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::audio::AudioInput;
use crate::config::ServiceConfig;
use crate::medical_log::{MedicalLogRecord, MedicalLogWriter};
use crate::protocol::{codes, decode_client, encode_server, ClientMessage, ConfigEcho, ServerMessage};
use crate::session::{SessionEvent, SessionOutput, SessionResources, SessionRunner};
use crate::ServiceError;

const CHANNEL_DEPTH: usize = 64;

/// Shared by every connection of one server.
struct Shared {
    resources: Arc<SessionResources>,
    log: std_mpsc::Sender<MedicalLogRecord>,
    echo: ConfigEcho,
    tick: Duration,
    clock_scale: f64,
    counter: AtomicU64,
}

pub struct Server {
    pub tcp_addr: SocketAddr,
    pub ws_addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl Server {
    /// Binds both listeners and starts accepting. Medical-log records go to
    /// `log`.
    pub async fn start(
        cfg: &ServiceConfig,
        resources: Arc<SessionResources>,
        log: std_mpsc::Sender<MedicalLogRecord>,
    ) -> Result<Self, ServiceError> {
        let bind = |port: u16| {
            let addr = format!("{}:{port}", cfg.bind);
            async move {
                TcpListener::bind(&addr)
                    .await
                    .map_err(|e| ServiceError::Bind(format!("{addr}: {e}")))
            }
        };
        let tcp = bind(cfg.port).await?;
        let ws = bind(cfg.ws_port()).await?;
        let tcp_addr = tcp.local_addr()?;
        let ws_addr = ws.local_addr()?;
        let shared = Arc::new(Shared {
            resources,
            log,
            echo: ConfigEcho {
                silence_threshold_s: cfg.silence_threshold_s,
                block_size_pairs: cfg.block_size_pairs,
                typing_rate_wpm: cfg.typing_rate_wpm,
            },
            tick: Duration::from_millis(cfg.tick_ms),
            clock_scale: cfg.clock_scale,
            counter: AtomicU64::new(0),
        });
        let (shutdown, rx) = watch::channel(false);
        let tasks = vec![
            tokio::spawn(accept_loop(tcp, Transport::Tcp, shared.clone(), rx.clone())),
            tokio::spawn(accept_loop(ws, Transport::WebSocket, shared, rx)),
        ];
        log::info!("listening on tcp://{tcp_addr} and ws://{ws_addr}");
        Ok(Self {
            tcp_addr,
            ws_addr,
            shutdown,
            tasks,
        })
    }

    /// Stops accepting new connections. Open connections finish on their own.
    pub async fn stop(self) {
        let _ = self.shutdown.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
    }
}

/// Runs the service until interrupted.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let resources = Arc::new(SessionResources::load(&cfg)?);
    let writer = MedicalLogWriter::spawn(&cfg.medical_log);
    let server = Server::start(&cfg, resources, writer.sender()).await?;
    println!("adscreen listening on tcp://{} and ws://{}", server.tcp_addr, server.ws_addr);
    tokio::signal::ctrl_c().await?;
    server.stop().await;
    Ok(())
}

#[derive(Clone, Copy)]
enum Transport {
    Tcp,
    WebSocket,
}

async fn accept_loop(listener: TcpListener, transport: Transport, shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    log::debug!("connection from {peer}");
                    let shared = shared.clone();
                    tokio::spawn(async move {
                        let result = match transport {
                            Transport::Tcp => serve_tcp(stream, shared).await,
                            Transport::WebSocket => serve_ws(stream, shared).await,
                        };
                        if let Err(e) = result {
                            log::warn!("connection from {peer} ended with error: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            _ = stop.changed() => break,
        }
    }
}

async fn serve_tcp(stream: TcpStream, shared: Arc<Shared>) -> Result<(), ServiceError> {
    let (read, mut write) = stream.into_split();
    let (in_tx, in_rx) = mpsc::channel::<String>(CHANNEL_DEPTH);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(CHANNEL_DEPTH);
    let reader = tokio::spawn(async move {
        let mut lines = BufReader::new(read).lines();
        while let Ok(Some(line)) = lines.next_line().await {
            if in_tx.send(line).await.is_err() {
                break;
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(mut line) = out_rx.recv().await {
            line.push('\n');
            if write.write_all(line.as_bytes()).await.is_err() {
                break;
            }
        }
        let _ = write.shutdown().await;
    });
    run_connection(in_rx, out_tx, &shared).await;
    reader.abort();
    let _ = writer.await;
    Ok(())
}

async fn serve_ws(stream: TcpStream, shared: Arc<Shared>) -> Result<(), ServiceError> {
    let ws = tokio_tungstenite::accept_async(stream)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?;
    let (mut sink, mut source) = ws.split();
    let (in_tx, in_rx) = mpsc::channel::<String>(CHANNEL_DEPTH);
    let (out_tx, mut out_rx) = mpsc::channel::<String>(CHANNEL_DEPTH);
    let reader = tokio::spawn(async move {
        while let Some(Ok(msg)) = source.next().await {
            let text = match msg {
                Message::Text(t) => t.to_string(),
                Message::Binary(b) => String::from_utf8_lossy(&b).into_owned(),
                Message::Close(_) => break,
                _ => continue,
            };
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                if in_tx.send(line.to_string()).await.is_err() {
                    return;
                }
            }
        }
    });
    let writer = tokio::spawn(async move {
        while let Some(line) = out_rx.recv().await {
            if sink.send(Message::text(line)).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });
    run_connection(in_rx, out_tx, &shared).await;
    reader.abort();
    let _ = writer.await;
    Ok(())
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

fn error_code(e: &ServiceError) -> &'static str {
    match e {
        ServiceError::EmptyUtterance => codes::EMPTY_UTTERANCE,
        ServiceError::Audio(_) => codes::BAD_AUDIO,
        ServiceError::ProtocolViolation(_) => codes::PROTOCOL_VIOLATION,
        _ => codes::INTERNAL,
    }
}

/// The per-connection event loop: client lines and clock ticks are
/// serialized into one session.
async fn run_connection(mut lines: mpsc::Receiver<String>, out: mpsc::Sender<String>, shared: &Shared) {
    let origin = Instant::now();
    let now = || origin.elapsed().as_secs_f64() * shared.clock_scale;
    let mut runner: Option<SessionRunner> = None;
    let mut ticker = tokio::time::interval(shared.tick);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);

    let send = |msg: ServerMessage| {
        let out = out.clone();
        async move { out.send(encode_server(&msg)).await.is_ok() }
    };
    let deliver = |outputs: Vec<SessionOutput>| {
        let mut msgs = Vec::new();
        for o in outputs {
            match o {
                SessionOutput::Log(r) => {
                    if shared.log.send(r).is_err() {
                        log::error!("medical log writer is gone");
                    }
                }
                other => msgs.extend(other.to_message()),
            }
        }
        msgs
    };

    loop {
        let event = tokio::select! {
            line = lines.recv() => match line {
                Some(line) => Some(line),
                None => None,
            },
            _ = ticker.tick() => {
                if let Some(r) = runner.as_mut().filter(|r| r.is_active()) {
                    match r.handle(&SessionEvent::Tick { now: now() }) {
                        Ok(outputs) => {
                            for m in deliver(outputs) {
                                if !send(m).await { return; }
                            }
                        }
                        Err(e) => log::error!("tick failed: {e}"),
                    }
                }
                continue;
            }
        };
        let Some(line) = event else {
            if let Some(r) = runner.as_mut().filter(|r| r.is_active()) {
                let outputs = r.handle(&SessionEvent::End { at: now() }).unwrap_or_default();
                deliver(outputs);
            }
            return;
        };
        if line.trim().is_empty() {
            continue;
        }
        let msg = match decode_client(&line) {
            Ok(m) => m,
            Err(e) => {
                if !send(ServerMessage::error(codes::BAD_MESSAGE, e)).await {
                    return;
                }
                continue;
            }
        };
        let (replies, close) = match msg {
            ClientMessage::Hello { client } => {
                if runner.as_ref().is_some_and(|r| r.is_active()) {
                    (vec![ServerMessage::error(codes::PROTOCOL_VIOLATION, "session already started")], false)
                } else {
                    let n = shared.counter.fetch_add(1, Ordering::Relaxed);
                    let session_id = format!("s{}-{n}", (unix_now() * 1000.0) as u64);
                    log::info!("session {session_id} opened by {client}");
                    let mut r = SessionRunner::new(shared.resources.clone());
                    let start = SessionEvent::Start {
                        session_id: session_id.clone(),
                        clock_origin: unix_now() - now() / shared.clock_scale,
                    };
                    let mut replies = vec![ServerMessage::Welcome {
                        session_id,
                        config: Some(shared.echo.clone()),
                    }];
                    match r.handle(&start) {
                        Ok(outputs) => replies.extend(deliver(outputs)),
                        Err(e) => replies.push(ServerMessage::error(codes::INTERNAL, e.to_string())),
                    }
                    runner = Some(r);
                    (replies, false)
                }
            }
            ClientMessage::Utterance {
                text,
                t_start,
                t_end,
                audio_b64,
            } => match runner.as_mut().filter(|r| r.is_active()) {
                None => (vec![ServerMessage::error(codes::NO_SESSION, "send hello first")], false),
                Some(r) => {
                    let event = SessionEvent::Utterance {
                        text,
                        t_start,
                        t_end,
                        arrival: now(),
                        audio: audio_b64.map(|b64| AudioInput::Wav { b64 }),
                        utterance_id: None,
                    };
                    match r.handle(&event) {
                        Ok(outputs) => (deliver(outputs), false),
                        Err(e) => (vec![ServerMessage::error(error_code(&e), e.to_string())], false),
                    }
                }
            },
            ClientMessage::Bye {} => match runner.as_mut().filter(|r| r.is_active()) {
                None => (vec![ServerMessage::error(codes::NO_SESSION, "no open session")], false),
                Some(r) => match r.handle(&SessionEvent::End { at: now() }) {
                    Ok(outputs) => (deliver(outputs), true),
                    Err(e) => (vec![ServerMessage::error(error_code(&e), e.to_string())], true),
                },
            },
        };
        for m in replies {
            if !send(m).await {
                return;
            }
        }
        if close {
            return;
        }
    }
}
