//! Synthetic users. Each profile is a bundle of symptom intensities
//! (speaking rate, fillers, repetitions, unanswered prompts, reply latency,
//! utterance length, within-turn pauses) labeled with a diagnosis degree by
//! construction. Sessions are scripted event streams replayed through
//! [`crate::session`].

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use adscreen_core::dialogue::DiagnosisDegree;
use adscreen_core::text::FILLERS;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{AudioInput, ToneRecipe};
use crate::session::SessionEvent;
use crate::ServiceError;

pub const DEFAULT_PAIRS: usize = 6;
const PSEUDO_AUDIO_RATE: u32 = 8000;
/// Share of each word's slot that is voiced in pseudo-audio.
const VOICED_SHARE: f64 = 0.8;
const FOCUS_SHARE: f64 = 0.2;
const QUESTION_WORDS: [&str; 4] = ["what", "where", "who", "when"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    #[serde(default)]
    pub sd: f64,
}

impl MeanSd {
    pub const fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.sd <= 0.0 {
            return self.mean;
        }
        Normal::new(self.mean, self.sd).map_or(self.mean, |n| n.sample(rng))
    }
}

fn default_vocabulary() -> Vec<String> {
    "i we you it the a and to of in on at my was is like went saw had made with some today yesterday \
     really very good nice there then after before home out little big old new walk talk visit eat cook \
     read watch play remember think know"
        .split_whitespace()
        .map(String::from)
        .collect()
}

fn default_focus_nouns() -> Vec<String> {
    "garden daughter movie music dinner church park book television friend weather kitchen"
        .split_whitespace()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserProfile {
    pub name: String,
    pub label: DiagnosisDegree,
    pub speaking_rate_wpm: MeanSd,
    pub filler_rate: f64,
    pub repetition_rate: f64,
    /// Probability that a reply slot stays silent.
    pub silence_prob: f64,
    /// Latency from the robot's turn to the reply.
    pub reply_delay_s: MeanSd,
    pub utterance_length: MeanSd,
    pub pause_rate_per_10w: f64,
    #[serde(default = "default_pause_s")]
    pub pause_s: MeanSd,
    #[serde(default)]
    pub question_prob: f64,
    #[serde(default = "default_f0")]
    pub f0_hz: f64,
    #[serde(default = "default_vocabulary")]
    pub vocabulary: Vec<String>,
    #[serde(default = "default_focus_nouns")]
    pub focus_nouns: Vec<String>,
}

fn default_pause_s() -> MeanSd {
    MeanSd::new(0.8, 0.2)
}

fn default_f0() -> f64 {
    150.0
}

impl UserProfile {
    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::Simulation(format!("profile {}: {m}", self.name)));
        for (k, p) in [
            ("filler_rate", self.filler_rate),
            ("repetition_rate", self.repetition_rate),
            ("silence_prob", self.silence_prob),
            ("question_prob", self.question_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{k} must lie in [0, 1], got {p}"));
            }
        }
        if self.filler_rate + self.repetition_rate > 1.0 {
            return bad("filler_rate + repetition_rate exceeds 1".into());
        }
        for (k, m) in [
            ("speaking_rate_wpm", self.speaking_rate_wpm),
            ("reply_delay_s", self.reply_delay_s),
            ("utterance_length", self.utterance_length),
            ("pause_s", self.pause_s),
        ] {
            if !(m.mean > 0.0 && m.sd >= 0.0) {
                return bad(format!("{k} needs a positive mean and non-negative sd"));
            }
        }
        if !(self.pause_rate_per_10w >= 0.0 && self.pause_rate_per_10w <= 10.0) {
            return bad("pause_rate_per_10w must lie in [0, 10]".into());
        }
        if self.vocabulary.is_empty() || !(self.f0_hz > 0.0) {
            return bad("vocabulary must be non-empty and f0_hz positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProfileFile {
    profile: Vec<UserProfile>,
}

pub fn parse_profiles(text: &str) -> Result<Vec<UserProfile>, ServiceError> {
    let file: ProfileFile = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
    for p in &file.profile {
        p.validate()?;
    }
    Ok(file.profile)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<UserProfile>, ServiceError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
    parse_profiles(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub n_pairs: usize,
    /// Attach tone-based pseudo-audio to every reply.
    pub pseudo_audio: bool,
    pub silence_threshold_s: f64,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            n_pairs: DEFAULT_PAIRS,
            pseudo_audio: false,
            silence_threshold_s: 5.0,
        }
    }
}

/// Ground truth for one user slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotAnnotation {
    pub slot: usize,
    pub silent: bool,
    pub tokens: usize,
    pub fillers: usize,
    pub repetitions: usize,
    pub pauses: usize,
    pub is_question: bool,
    /// Articulation time, pauses excluded.
    pub speech_s: f64,
    pub pause_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedSession {
    pub session_id: String,
    pub profile: String,
    pub label: DiagnosisDegree,
    pub seed: u64,
    pub events: Vec<SessionEvent>,
    pub annotations: Vec<SlotAnnotation>,
}

struct Reply {
    text: String,
    annotation: SlotAnnotation,
    spans: Vec<(f64, bool)>,
}

fn reply(profile: &UserProfile, slot: usize, rng: &mut ChaCha8Rng) -> Reply {
    let n = profile.utterance_length.sample(rng).round().max(1.0) as usize;
    let rate = profile.speaking_rate_wpm.sample(rng).max(0.2 * profile.speaking_rate_wpm.mean);
    let word_s = 60.0 / rate;
    let is_question = rng.gen_bool(profile.question_prob);
    let mut tokens: Vec<String> = Vec::with_capacity(n);
    let mut spans = Vec::new();
    let (mut fillers, mut repetitions, mut pauses, mut pause_total) = (0, 0, 0, 0.0);
    for k in 0..n {
        if k > 0 && rng.gen_bool(profile.pause_rate_per_10w / 10.0) {
            let p = profile.pause_s.sample(rng).max(0.3);
            spans.push((p, false));
            pauses += 1;
            pause_total += p;
        }
        let u: f64 = rng.gen();
        let last_word = tokens.iter().rev().find(|t| !FILLERS.contains(&t.as_str())).cloned();
        let token = if u < profile.filler_rate {
            fillers += 1;
            FILLERS[rng.gen_range(0..FILLERS.len())].to_string()
        } else if u < profile.filler_rate + profile.repetition_rate && last_word.is_some() {
            repetitions += 1;
            last_word.unwrap_or_default()
        } else if k == 0 && is_question {
            QUESTION_WORDS[rng.gen_range(0..QUESTION_WORDS.len())].to_string()
        } else if rng.gen_bool(FOCUS_SHARE) && !profile.focus_nouns.is_empty() {
            profile.focus_nouns[rng.gen_range(0..profile.focus_nouns.len())].clone()
        } else {
            profile.vocabulary[rng.gen_range(0..profile.vocabulary.len())].clone()
        };
        tokens.push(token);
        spans.push((word_s * VOICED_SHARE, true));
        spans.push((word_s * (1.0 - VOICED_SHARE), false));
    }
    let mut text = tokens.join(" ");
    if let Some(first) = text.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    text.push(if is_question { '?' } else { '.' });
    Reply {
        text,
        annotation: SlotAnnotation {
            slot,
            silent: false,
            tokens: n,
            fillers,
            repetitions,
            pauses,
            is_question,
            speech_s: n as f64 * word_s,
            pause_s: pause_total,
        },
        spans,
    }
}

/// Deterministic in `(profile, seed, options)`. The robot is assumed to
/// answer each reply at its end, and each silent slot at the moment the
/// silence threshold elapses.
pub fn generate_session(
    profile: &UserProfile,
    seed: u64,
    session_id: &str,
    opts: &GenerateOptions,
) -> Result<ScriptedSession, ServiceError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = opts.silence_threshold_s;
    let max_delay = (threshold - 0.5).max(0.2);
    let mut events = vec![SessionEvent::Start {
        session_id: session_id.to_string(),
        clock_origin: 0.0,
    }];
    let mut annotations = Vec::with_capacity(opts.n_pairs);
    // the session opens as if the robot had just spoken
    let mut emission = 0.0;
    for slot in 0..opts.n_pairs {
        if rng.gen_bool(profile.silence_prob) {
            emission += threshold;
            events.push(SessionEvent::Tick { now: emission });
            annotations.push(SlotAnnotation {
                slot,
                silent: true,
                tokens: 0,
                fillers: 0,
                repetitions: 0,
                pauses: 0,
                is_question: false,
                speech_s: 0.0,
                pause_s: 0.0,
            });
            continue;
        }
        let delay = profile.reply_delay_s.sample(&mut rng).clamp(0.2, max_delay);
        let r = reply(profile, slot, &mut rng);
        let t_start = emission + delay;
        let t_end = t_start + r.annotation.speech_s + r.annotation.pause_s;
        let audio = opts.pseudo_audio.then(|| {
            AudioInput::Tone(ToneRecipe {
                sample_rate: PSEUDO_AUDIO_RATE,
                f0_hz: profile.f0_hz,
                amplitude: 0.3,
                spans: r.spans.clone(),
            })
        });
        events.push(SessionEvent::Utterance {
            text: r.text,
            t_start: Some(t_start),
            t_end: Some(t_end),
            arrival: t_end,
            audio,
            utterance_id: Some(format!("{session_id}-{slot}")),
        });
        annotations.push(r.annotation);
        emission = t_end;
    }
    events.push(SessionEvent::End { at: emission + 1.0 });
    Ok(ScriptedSession {
        session_id: session_id.to_string(),
        profile: profile.name.clone(),
        label: profile.label,
        seed,
        events,
        annotations,
    })
}

/// Per-session seed from the corpus seed and the session's index.
pub fn session_seed(corpus_seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub file: String,
    pub label: DiagnosisDegree,
    pub seed: u64,
    pub profile: String,
    pub sha256: String,
}

pub const MANIFEST: &str = "manifest.csv";

/// Writes `n_per_profile` sessions for every profile under `out` with a
/// `manifest.csv` index. Session `k` of profile `p` uses stream
/// `p * n_per_profile + k` of `seed`.
pub fn generate_corpus(
    profiles: &[UserProfile],
    n_per_profile: usize,
    seed: u64,
    opts: &GenerateOptions,
    out: impl AsRef<Path>,
) -> Result<Vec<ManifestRow>, ServiceError> {
    let labels: BTreeSet<_> = profiles.iter().map(|p| p.label).collect();
    if labels.len() < 2 {
        return Err(ServiceError::Simulation("a corpus needs at least two distinct labels".into()));
    }
    let out = out.as_ref();
    std::fs::create_dir_all(out)?;
    let mut rows = Vec::with_capacity(profiles.len() * n_per_profile);
    for (p, profile) in profiles.iter().enumerate() {
        for k in 0..n_per_profile {
            let index = (p * n_per_profile + k) as u64;
            let s = session_seed(seed, index);
            let id = format!("{}-{k:04}", profile.name);
            let session = generate_session(profile, s, &id, opts)?;
            let body = serde_json::to_string(&session).expect("sessions serialize");
            let file = format!("{id}.json");
            std::fs::write(out.join(&file), &body)?;
            rows.push(ManifestRow {
                file,
                label: profile.label,
                seed: s,
                profile: profile.name.clone(),
                sha256: format!("{:x}", Sha256::digest(body.as_bytes())),
            });
        }
    }
    let mut w = csv::Writer::from_path(out.join(MANIFEST)).map_err(csv_err)?;
    for r in &rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(rows)
}

fn csv_err(e: csv::Error) -> ServiceError {
    ServiceError::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestRow>, ServiceError> {
    let mut r = csv::Reader::from_path(dir.as_ref().join(MANIFEST)).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Every session listed in the manifest, in manifest order.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<(ManifestRow, ScriptedSession)>, ServiceError> {
    let dir = dir.as_ref();
    read_manifest(dir)?
        .into_iter()
        .map(|row| {
            let path: PathBuf = dir.join(&row.file);
            let text = std::fs::read_to_string(&path)?;
            let s: ScriptedSession = serde_json::from_str(&text).map_err(|e| ServiceError::Parse {
                line: e.line(),
                message: format!("{}: {e}", path.display()),
            })?;
            Ok((row, s))
        })
        .collect()
}
