//! Utterances, turn-pairs, six-pair dialogue blocks and the four-degree
//! diagnosis distribution shared by the detector and the listener.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

/// Number of turn-pairs forming one diagnostic dialogue block.
pub const PAIRS_PER_BLOCK: usize = 6;

/// Normalization tolerance every [`DegreeDistribution`] is checked against.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DialogueError {
    #[error("speaker mismatch: expected {expected:?}, got {found:?}")]
    SpeakerMismatch { expected: Speaker, found: Speaker },
    #[error("time order violation: {0}")]
    TimeOrderViolation(String),
    #[error("robot utterances cannot carry audio")]
    RobotAudio,
    #[error("distribution has zero mass")]
    ZeroMass,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("turn-pair index {found} does not follow {expected}")]
    IndexGap { expected: usize, found: usize },
    #[error("block needs exactly {expected} pairs, got {found}")]
    BlockSize { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Human,
    Robot,
}

/// One utterance event on the session clock (seconds since session start).
///
/// A human utterance with no tokens stands for a silence span that triggered
/// a proactive prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
    pub raw_text: String,
    pub t_start: f64,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
}

impl Utterance {
    pub fn new(
        speaker: Speaker,
        raw_text: impl Into<String>,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self, DialogueError> {
        let raw_text = raw_text.into();
        if !(t_start.is_finite() && t_end.is_finite()) || t_end < t_start {
            return Err(DialogueError::TimeOrderViolation(format!(
                "utterance ends at {t_end} before it starts at {t_start}"
            )));
        }
        Ok(Self {
            speaker,
            tokens: tokenize(&raw_text),
            raw_text,
            t_start,
            t_end,
            audio_ref: None,
        })
    }

    /// A human silence span `[t_start, t_end]`.
    pub fn silence(t_start: f64, t_end: f64) -> Result<Self, DialogueError> {
        Self::new(Speaker::Human, "", t_start, t_end)
    }

    pub fn with_audio(mut self, audio_ref: impl Into<String>) -> Result<Self, DialogueError> {
        if self.speaker == Speaker::Robot {
            return Err(DialogueError::RobotAudio);
        }
        self.audio_ref = Some(audio_ref.into());
        Ok(self)
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn is_silence(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.tokens.len()
    }

    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            t_start: self.t_start + dt,
            t_end: self.t_end + dt,
            ..self.clone()
        }
    }
}

/// Concatenates consecutive human utterances into one human turn spanning
/// from the first start to the last end.
pub fn merge_human_turns(parts: &[Utterance]) -> Result<Option<Utterance>, DialogueError> {
    let Some(first) = parts.first() else {
        return Ok(None);
    };
    for part in parts {
        if part.speaker != Speaker::Human {
            return Err(DialogueError::SpeakerMismatch {
                expected: Speaker::Human,
                found: part.speaker,
            });
        }
    }
    for w in parts.windows(2) {
        if w[1].t_start < w[0].t_end {
            return Err(DialogueError::TimeOrderViolation(
                "merged utterances overlap".into(),
            ));
        }
    }
    let last = parts.last().expect("non-empty");
    let text = parts
        .iter()
        .map(|u| u.raw_text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    let mut merged = Utterance::new(Speaker::Human, text, first.t_start, last.t_end)?;
    merged.audio_ref = parts.iter().rev().find_map(|u| u.audio_ref.clone());
    Ok(Some(merged))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnPair {
    pub human: Utterance,
    pub robot: Utterance,
    pub index: usize,
}

pub fn make_turn_pair(
    human: Utterance,
    robot: Utterance,
    index: usize,
) -> Result<TurnPair, DialogueError> {
    if human.speaker != Speaker::Human {
        return Err(DialogueError::SpeakerMismatch {
            expected: Speaker::Human,
            found: human.speaker,
        });
    }
    if robot.speaker != Speaker::Robot {
        return Err(DialogueError::SpeakerMismatch {
            expected: Speaker::Robot,
            found: robot.speaker,
        });
    }
    if robot.audio_ref.is_some() {
        return Err(DialogueError::RobotAudio);
    }
    if human.t_end > robot.t_start {
        return Err(DialogueError::TimeOrderViolation(format!(
            "human turn ends at {} after robot starts at {}",
            human.t_end, robot.t_start
        )));
    }
    Ok(TurnPair {
        human,
        robot,
        index,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueBlock {
    pairs: Vec<TurnPair>,
    block_index: usize,
}

impl DialogueBlock {
    pub fn new(pairs: Vec<TurnPair>, block_index: usize) -> Result<Self, DialogueError> {
        if pairs.len() != PAIRS_PER_BLOCK {
            return Err(DialogueError::BlockSize {
                expected: PAIRS_PER_BLOCK,
                found: pairs.len(),
            });
        }
        Self::with_size(pairs, block_index)
    }

    /// Builds a block of non-standard size. Used only when a deployment
    /// overrides the six-pair unit.
    pub fn with_size(pairs: Vec<TurnPair>, block_index: usize) -> Result<Self, DialogueError> {
        if pairs.is_empty() {
            return Err(DialogueError::BlockSize {
                expected: PAIRS_PER_BLOCK,
                found: 0,
            });
        }
        for w in pairs.windows(2) {
            if w[1].index != w[0].index + 1 {
                return Err(DialogueError::IndexGap {
                    expected: w[0].index + 1,
                    found: w[1].index,
                });
            }
        }
        Ok(Self { pairs, block_index })
    }

    pub fn pairs(&self) -> &[TurnPair] {
        &self.pairs
    }

    pub fn block_index(&self) -> usize {
        self.block_index
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Copy with every timestamp moved by `dt` seconds.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|p| TurnPair {
                    human: p.human.shifted(dt),
                    robot: p.robot.shifted(dt),
                    index: p.index,
                })
                .collect(),
            block_index: self.block_index,
        }
    }
}

/// A live dialogue: appended turn-pairs, partitioned into blocks as they
/// complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    /// Wall-clock origin of the session clock, seconds since the Unix epoch.
    pub clock_origin: f64,
    pairs: Vec<TurnPair>,
    completed_blocks: Vec<DialogueBlock>,
    block_size: usize,
}

impl DialogueSession {
    pub fn new(session_id: impl Into<String>, clock_origin: f64) -> Self {
        Self::with_block_size(session_id, clock_origin, PAIRS_PER_BLOCK)
    }

    pub fn with_block_size(
        session_id: impl Into<String>,
        clock_origin: f64,
        block_size: usize,
    ) -> Self {
        Self {
            session_id: session_id.into(),
            clock_origin,
            pairs: Vec::new(),
            completed_blocks: Vec::new(),
            block_size: block_size.max(1),
        }
    }

    pub fn pairs(&self) -> &[TurnPair] {
        &self.pairs
    }

    pub fn completed_blocks(&self) -> &[DialogueBlock] {
        &self.completed_blocks
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn next_index(&self) -> usize {
        self.pairs.len()
    }

    /// Time of the latest utterance end, or 0 for an empty session.
    pub fn last_time(&self) -> f64 {
        self.pairs.last().map_or(0.0, |p| p.robot.t_end)
    }

    pub fn push_pair(&mut self, pair: TurnPair) -> Result<(), DialogueError> {
        if pair.index != self.pairs.len() {
            return Err(DialogueError::IndexGap {
                expected: self.pairs.len(),
                found: pair.index,
            });
        }
        if let Some(prev) = self.pairs.last() {
            if pair.human.t_start < prev.robot.t_start {
                return Err(DialogueError::TimeOrderViolation(format!(
                    "pair {} starts at {} before previous robot turn at {}",
                    pair.index, pair.human.t_start, prev.robot.t_start
                )));
            }
        }
        self.pairs.push(pair);
        Ok(())
    }

    pub fn pending_pairs(&self) -> usize {
        self.pairs.len() - self.completed_blocks.len() * self.block_size
    }

    /// Moves the oldest unblocked pairs into a new block once a full block is
    /// available.
    pub fn close_block(&mut self) -> Option<DialogueBlock> {
        if self.pending_pairs() < self.block_size {
            return None;
        }
        let start = self.completed_blocks.len() * self.block_size;
        let pairs = self.pairs[start..start + self.block_size].to_vec();
        let block = DialogueBlock::with_size(pairs, self.completed_blocks.len())
            .expect("session pairs are consecutive");
        self.completed_blocks.push(block.clone());
        Some(block)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosisDegree {
    NonAd,
    Mild,
    Moderate,
    Severe,
}

impl DiagnosisDegree {
    pub const ALL: [DiagnosisDegree; 4] = [
        DiagnosisDegree::NonAd,
        DiagnosisDegree::Mild,
        DiagnosisDegree::Moderate,
        DiagnosisDegree::Severe,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosisDegree::NonAd => "non_ad",
            DiagnosisDegree::Mild => "mild",
            DiagnosisDegree::Moderate => "moderate",
            DiagnosisDegree::Severe => "severe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "non_ad" | "nonad" => Some(DiagnosisDegree::NonAd),
            "mild" => Some(DiagnosisDegree::Mild),
            "moderate" => Some(DiagnosisDegree::Moderate),
            "severe" => Some(DiagnosisDegree::Severe),
            _ => None,
        }
    }
}

impl fmt::Display for DiagnosisDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Probability vector over the four diagnosis degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DegreeDistribution([f64; 4]);

impl DegreeDistribution {
    pub fn uniform() -> Self {
        Self([0.25; 4])
    }

    pub fn one_hot(degree: DiagnosisDegree) -> Self {
        let mut p = [0.0; 4];
        p[degree.index()] = 1.0;
        Self(p)
    }

    /// Validates an already-normalized probability vector.
    pub fn new(p: [f64; 4]) -> Result<Self, DialogueError> {
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DialogueError::InvalidDistribution(format!(
                "components must be finite and non-negative: {p:?}"
            )));
        }
        let mass: f64 = p.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(DialogueError::InvalidDistribution(format!(
                "mass {mass} is not 1"
            )));
        }
        Ok(Self(p))
    }

    pub fn probs(&self) -> &[f64; 4] {
        &self.0
    }

    pub fn prob(&self, degree: DiagnosisDegree) -> f64 {
        self.0[degree.index()]
    }

    /// Most probable degree; exact ties go to the more severe degree.
    pub fn argmax(&self) -> DiagnosisDegree {
        let mut best = 0;
        for i in 1..4 {
            if self.0[i] >= self.0[best] {
                best = i;
            }
        }
        DiagnosisDegree::ALL[best]
    }
}

impl<'de> Deserialize<'de> for DegreeDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let p = <[f64; 4]>::deserialize(d)?;
        DegreeDistribution::new(p).map_err(serde::de::Error::custom)
    }
}

pub fn normalize_distribution(raw: [f64; 4]) -> Result<DegreeDistribution, DialogueError> {
    if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(DialogueError::InvalidDistribution(format!(
            "raw weights must be finite and non-negative: {raw:?}"
        )));
    }
    let mass: f64 = raw.iter().sum();
    if mass <= 0.0 {
        return Err(DialogueError::ZeroMass);
    }
    DegreeDistribution::new(raw.map(|v| v / mass))
}
