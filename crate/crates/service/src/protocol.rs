//! Newline-delimited JSON messages shared by the raw TCP and WebSocket
//! transports. Each message is one JSON object with a `type` tag.

use std::collections::BTreeMap;

use adscreen_core::detectors::BlockVerdict;
use adscreen_core::dialogue::DiagnosisDegree;
use adscreen_core::listener::ResponseType;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        client: String,
    },
    Utterance {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_start: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_end: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        audio_b64: Option<String>,
    },
    Bye {},
}

/// Settings echoed to the client at the handshake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub silence_threshold_s: f64,
    pub block_size_pairs: usize,
    pub typing_rate_wpm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        session_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<ConfigEcho>,
    },
    Response {
        response_type: ResponseType,
        text: String,
    },
    SilenceWatch {
        deadline_s: f64,
        stage: u32,
    },
    Diagnosis {
        block_index: usize,
        #[serde(rename = "final")]
        final_degree: DiagnosisDegree,
        per_classifier: BTreeMap<String, [f64; 4]>,
        votes: Vec<DiagnosisDegree>,
        tie_broken: bool,
    },
    Error {
        code: String,
        message: String,
    },
}

impl ServerMessage {
    pub fn error(code: &str, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn diagnosis(v: &BlockVerdict) -> Self {
        ServerMessage::Diagnosis {
            block_index: v.block_index,
            final_degree: v.final_degree,
            per_classifier: v
                .per_classifier
                .iter()
                .map(|(k, d)| (k.as_str().to_string(), *d.probs()))
                .collect(),
            votes: v.votes.to_vec(),
            tie_broken: v.tie_broken,
        }
    }
}

/// Error codes sent in `error` messages.
pub mod codes {
    pub const BAD_MESSAGE: &str = "bad_message";
    pub const NO_SESSION: &str = "no_session";
    pub const PROTOCOL_VIOLATION: &str = "protocol_violation";
    pub const EMPTY_UTTERANCE: &str = "empty_utterance";
    pub const BAD_AUDIO: &str = "bad_audio";
    pub const INTERNAL: &str = "internal";
}

pub fn decode_client(line: &str) -> Result<ClientMessage, String> {
    serde_json::from_str(line.trim()).map_err(|e| e.to_string())
}

pub fn encode_client(msg: &ClientMessage) -> String {
    serde_json::to_string(msg).expect("client messages serialize")
}

pub fn decode_server(line: &str) -> Result<ServerMessage, String> {
    serde_json::from_str(line.trim()).map_err(|e| e.to_string())
}

pub fn encode_server(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}
