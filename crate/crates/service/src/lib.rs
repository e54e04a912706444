//! Live screening sessions: the event loop binding the proactive listener to
//! the ensemble detector, the NDJSON/WebSocket server, the medical log, the
//! synthetic-user simulator and model training.

pub mod audio;
pub mod config;
pub mod experiment;
pub mod medical_log;
pub mod protocol;
pub mod server;
pub mod session;
pub mod simulator;
pub mod training;

use adscreen_core::detectors::DetectorError;
use adscreen_core::dialogue::DialogueError;
use adscreen_core::listener::ListenerError;
use adscreen_core::neural::NeuralError;
use adscreen_core::text::TextError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("audio error: {0}")]
    Audio(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("could not bind: {0}")]
    Bind(String),
    #[error("simulation error: {0}")]
    Simulation(String),
    #[error(transparent)]
    Listener(#[from] ListenerError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}
