//! Conversational dementia screening: a proactive listener that keeps a
//! spoken dialogue going, and a four-classifier ensemble that grades each
//! six-turn-pair block of that dialogue.

pub mod detectors;
pub mod dialogue;
pub mod listener;
pub mod neural;
pub mod signal;
pub mod text;
