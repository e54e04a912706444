//! Service configuration: a TOML file whose keys may each be overridden by
//! an environment variable named `ADSCREEN_<KEY>` in upper case, for example
//! `ADSCREEN_PORT=9000` or `ADSCREEN_SILENCE_THRESHOLD_S=4.5`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const ENV_PREFIX: &str = "ADSCREEN_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// WebSocket port; `port + 1` when unset.
    pub ws_port: Option<u16>,
    pub silence_threshold_s: f64,
    pub block_size_pairs: usize,
    pub wh_threshold: f64,
    pub vad_threshold_db: f64,
    pub pause_min_s: f64,
    pub typing_rate_wpm: f64,
    pub robot_rate_wpm: f64,
    pub breakdown_cap: u32,
    pub audio_segment_s: f64,
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    pub tick_ms: u64,
    /// Session seconds per real second; above 1 the service clock runs fast.
    pub clock_scale: f64,
    pub qa_db: PathBuf,
    pub topics: PathBuf,
    pub formulaic: Option<PathBuf>,
    pub ngram_corpus: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub models_dir: Option<PathBuf>,
    pub medical_log: PathBuf,
    pub external_features: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 7878,
            ws_port: None,
            silence_threshold_s: 5.0,
            block_size_pairs: 6,
            wh_threshold: 1e-4,
            vad_threshold_db: -40.0,
            pause_min_s: 0.25,
            typing_rate_wpm: 150.0,
            robot_rate_wpm: 150.0,
            breakdown_cap: 5,
            audio_segment_s: 0.5,
            embedding_dim: 16,
            embedding_seed: 7,
            tick_ms: 100,
            clock_scale: 1.0,
            qa_db: "data/qa.txt".into(),
            topics: "data/topics.txt".into(),
            formulaic: Some("data/formulaic.txt".into()),
            ngram_corpus: "data/wh_corpus.txt".into(),
            embeddings: None,
            models_dir: Some("models".into()),
            medical_log: "medical_log.jsonl".into(),
            external_features: None,
        }
    }
}

impl ServiceConfig {
    /// Parses TOML text, applies overrides from `env`, and validates.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self, ServiceError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ServiceError::Config(e.to_string()))?;
        for (key, value) in env {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let name = name.to_ascii_lowercase();
            table.insert(name, parse_scalar(&value));
        }
        let cfg: ServiceConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies process environment overrides, and resolves
    /// relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_with_env(&text, std::env::vars())?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.qa_db);
        fix(&mut self.topics);
        fix(&mut self.ngram_corpus);
        fix(&mut self.medical_log);
        for p in [
            &mut self.formulaic,
            &mut self.embeddings,
            &mut self.models_dir,
            &mut self.external_features,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::Config(m));
        if !(self.silence_threshold_s > 0.0) {
            return bad(format!("silence_threshold_s must be positive, got {}", self.silence_threshold_s));
        }
        if !(self.wh_threshold > 0.0 && self.wh_threshold < 1.0) {
            return bad(format!("wh_threshold must lie in (0, 1), got {}", self.wh_threshold));
        }
        if self.block_size_pairs == 0 {
            return bad("block_size_pairs must be positive".into());
        }
        if !(self.typing_rate_wpm > 0.0 && self.robot_rate_wpm > 0.0) {
            return bad("speech and typing rates must be positive".into());
        }
        if !(self.audio_segment_s > 0.0) || self.embedding_dim == 0 || self.tick_ms == 0 {
            return bad("audio_segment_s, embedding_dim and tick_ms must be positive".into());
        }
        if !(self.clock_scale > 0.0 && self.clock_scale.is_finite()) {
            return bad(format!("clock_scale must be positive, got {}", self.clock_scale));
        }
        Ok(())
    }

    /// An ephemeral main port makes the WebSocket port ephemeral too.
    pub fn ws_port(&self) -> u16 {
        self.ws_port
            .unwrap_or_else(|| if self.port == 0 { 0 } else { self.port.wrapping_add(1) })
    }
}

/// Environment values are read as TOML scalars when they parse as one, and
/// as plain strings otherwise.
fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}
