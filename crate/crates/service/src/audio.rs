//! Audio attached to user utterances: WAV bytes from clients, tone recipes
//! from the simulator, or precomputed feature vectors.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use adscreen_core::signal::AudioBuffer;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AudioInput {
    /// Base64-encoded mono WAV.
    Wav { b64: String },
    Tone(ToneRecipe),
    Features { values: Vec<f64> },
}

/// Pseudo-speech: one sine burst per word separated by silent gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToneRecipe {
    pub sample_rate: u32,
    pub f0_hz: f64,
    pub amplitude: f64,
    /// `(duration_s, voiced)` spans in order.
    pub spans: Vec<(f64, bool)>,
}

impl ToneRecipe {
    pub fn duration_s(&self) -> f64 {
        self.spans.iter().map(|s| s.0).sum()
    }

    /// Each voiced span gets a short linear fade to avoid clicks and a pitch
    /// drift of up to 5% so that spans differ.
    pub fn render(&self) -> AudioBuffer {
        let sr = f64::from(self.sample_rate);
        let mut samples = Vec::new();
        for (i, &(dur, voiced)) in self.spans.iter().enumerate() {
            let n = (dur * sr).round() as usize;
            if !voiced {
                samples.extend(std::iter::repeat(0.0).take(n));
                continue;
            }
            let f = self.f0_hz * (1.0 + 0.05 * ((i % 5) as f64 / 4.0 - 0.5));
            let fade = (0.01 * sr) as usize;
            for k in 0..n {
                let edge = k.min(n - 1 - k) as f64 / fade.max(1) as f64;
                let env = edge.min(1.0);
                samples.push(self.amplitude * env * (2.0 * PI * f * k as f64 / sr).sin());
            }
        }
        AudioBuffer::new(samples, self.sample_rate)
    }
}

pub fn encode_wav_b64(buf: &AudioBuffer) -> String {
    base64::engine::general_purpose::STANDARD.encode(buf.to_wav_bytes())
}

pub fn decode_wav_b64(b64: &str) -> Result<AudioBuffer, ServiceError> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.trim())
        .map_err(|e| ServiceError::Audio(format!("invalid base64: {e}")))?;
    AudioBuffer::from_wav_bytes(&bytes).map_err(|e| ServiceError::Audio(e.to_string()))
}

/// Reads a CSV of precomputed utterance features: a header row, the
/// utterance id in the first column and one numeric feature per remaining
/// column. Duplicate ids keep the last row.
pub fn load_external_features(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<f64>>, ServiceError> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| ServiceError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| ServiceError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let dim = headers.len().saturating_sub(1);
    if dim == 0 {
        return Err(ServiceError::DimMismatch("header names no feature columns".into()));
    }
    let mut out = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| ServiceError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != dim + 1 {
            return Err(ServiceError::Parse {
                line,
                message: format!("expected {dim} values, found {}", record.len().saturating_sub(1)),
            });
        }
        let id = record[0].to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ServiceError::Parse {
                line,
                message: e.to_string(),
            })?;
        if out.insert(id.clone(), values).is_some() {
            log::warn!("{}: duplicate utterance id {id} on line {line}, keeping the later row", path.display());
        }
    }
    Ok(out)
}
