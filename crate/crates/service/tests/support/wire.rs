#![allow(dead_code)]

//! A line-oriented protocol client and the scripted dialogue played over it.

use std::path::Path;
use std::time::Duration;

use adscreen_core::listener::ResponseType;
use adscreen_service::config::ServiceConfig;
use adscreen_service::medical_log::{read_medical_log, MedicalLogRecord};
use adscreen_service::protocol::{decode_server, ServerMessage};
use adscreen_service::server::Server;
use futures_util::{SinkExt, StreamExt};
use serde_json::json;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;

use super::config;

pub const DEADLINE: Duration = Duration::from_secs(20);

pub fn fast_config() -> ServiceConfig {
    ServiceConfig {
        port: 0,
        clock_scale: 20.0,
        tick_ms: 10,
        ..config()
    }
}

/// A line-oriented client over either transport.
pub enum Client {
    Tcp(tokio::io::Lines<BufReader<tokio::net::tcp::OwnedReadHalf>>, tokio::net::tcp::OwnedWriteHalf),
    Ws(tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<TcpStream>>),
}

impl Client {
    pub async fn tcp(server: &Server) -> Self {
        let (r, w) = TcpStream::connect(server.tcp_addr).await.unwrap().into_split();
        Client::Tcp(BufReader::new(r).lines(), w)
    }

    pub async fn ws(server: &Server) -> Self {
        let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{}", server.ws_addr)).await.unwrap();
        Client::Ws(ws)
    }

    pub async fn send(&mut self, line: &str) {
        match self {
            Client::Tcp(_, w) => w.write_all(format!("{line}\n").as_bytes()).await.unwrap(),
            Client::Ws(ws) => ws.send(Message::text(line.to_string())).await.unwrap(),
        }
    }

    pub async fn recv(&mut self) -> Option<ServerMessage> {
        let line = tokio::time::timeout(DEADLINE, async {
            match self {
                Client::Tcp(lines, _) => lines.next_line().await.unwrap(),
                Client::Ws(ws) => loop {
                    match ws.next().await {
                        Some(Ok(Message::Text(t))) => break Some(t.to_string()),
                        Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break None,
                        Some(Ok(_)) => continue,
                    }
                },
            }
        })
        .await
        .expect("server reply in time")?;
        Some(decode_server(&line).unwrap_or_else(|e| panic!("schema-invalid server line {line}: {e}")))
    }

    /// Next message that is not a silence watch.
    pub async fn recv_event(&mut self) -> ServerMessage {
        loop {
            match self.recv().await.expect("connection open") {
                ServerMessage::SilenceWatch { .. } => continue,
                m => return m,
            }
        }
    }

    pub async fn expect_response(&mut self) -> (ResponseType, String) {
        match self.recv_event().await {
            ServerMessage::Response { response_type, text } => (response_type, text),
            m => panic!("expected a response, got {m:?}"),
        }
    }
}

pub fn utter(text: &str, a: f64, b: f64) -> String {
    json!({"type": "utterance", "text": text, "t_start": a, "t_end": b}).to_string()
}

/// Plays the scripted dialogue, with malformed traffic mixed in, and
/// returns the session id and the robot's replies.
pub async fn table_one_client(mut c: Client, name: &str) -> (String, Vec<(ResponseType, String)>) {
    c.send(&utter("too early", 0.0, 0.5)).await;
    assert!(matches!(c.recv_event().await, ServerMessage::Error { code, .. } if code == "no_session"));
    c.send(&json!({"type": "hello", "client": name}).to_string()).await;
    let id = match c.recv_event().await {
        ServerMessage::Welcome { session_id, config } => {
            let echo = config.expect("config echo");
            assert_eq!(echo.silence_threshold_s, 5.0);
            assert_eq!(echo.block_size_pairs, 6);
            session_id
        }
        m => panic!("expected welcome, got {m:?}"),
    };
    let mut got = Vec::new();
    for (i, (text, a, b)) in [
        ("How is the weather?", 1.0, 2.0),
        ("OK, I'll watch a movie then.", 4.0, 6.0),
        ("Avengers, the newest one.", 8.0, 10.0),
    ]
    .into_iter()
    .enumerate()
    {
        c.send(&utter(text, a, b)).await;
        got.push(c.expect_response().await);
        let junk = ["{not json", r#"{"type":"dance"}"#, r#"{"type":"utterance","text":""}"#][i];
        c.send(junk).await;
        match c.recv_event().await {
            ServerMessage::Error { code, .. } => {
                assert_eq!(code, if i == 2 { "empty_utterance" } else { "bad_message" })
            }
            m => panic!("expected an error, got {m:?}"),
        }
    }
    got.push(c.expect_response().await);
    got.push(c.expect_response().await);
    c.send(&utter("Yes, I like.", 21.0, 22.0)).await;
    got.push(c.expect_response().await);
    match c.recv_event().await {
        ServerMessage::Diagnosis { block_index, votes, per_classifier, .. } => {
            assert_eq!(block_index, 0);
            assert_eq!(votes.len(), 4);
            assert_eq!(per_classifier.len(), 4);
        }
        m => panic!("expected a diagnosis, got {m:?}"),
    }
    c.send(r#"{"type":"bye"}"#).await;
    while c.recv().await.is_some() {}
    (id, got)
}

pub async fn wait_for_lines(path: &Path, n: usize) -> Vec<MedicalLogRecord> {
    let start = std::time::Instant::now();
    loop {
        if let Ok(records) = read_medical_log(path) {
            if records.len() >= n || start.elapsed() > DEADLINE {
                return records;
            }
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

