//! Rule-based proactive listener: tags each user turn as a question or a
//! statement, answers, asks about or repeats the focus word, and fills
//! silences with a follow-up question and then topic introductions.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Utterance;
use crate::neural::{NeuralError, SequenceClassifier};
use crate::text::{embed_sequence, extract_focus, tokenize, BigramModel, EmbeddingTable};

/// First tokens that mark a question.
pub const QUESTION_STARTERS: &[&str] = &[
    "who", "what", "when", "where", "which", "why", "how", "do", "does", "did", "is", "are", "can",
    "could", "will", "would",
];

#[derive(Debug, Error, PartialEq)]
pub enum ListenerError {
    #[error("utterance has no tokens")]
    EmptyUtterance,
    #[error("event at {event} precedes listener clock {clock}")]
    ClockRegression { event: f64, clock: f64 },
    #[error("silence timer checked at {at} before its deadline {deadline}")]
    NotExpired { at: f64, deadline: f64 },
    #[error("QA database line {line}: {message}")]
    QaFormat { line: usize, message: String },
    #[error("invalid listener config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialogueAct {
    Question,
    Statement,
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    Answer,
    QuestionOnFocus,
    PartialRepeat,
    FollowUpQuestion,
    TopicIntroduction,
    FormulaicResponse,
}

impl ResponseType {
    pub const ALL: [ResponseType; 6] = [
        ResponseType::Answer,
        ResponseType::QuestionOnFocus,
        ResponseType::PartialRepeat,
        ResponseType::FollowUpQuestion,
        ResponseType::TopicIntroduction,
        ResponseType::FormulaicResponse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResponseType::Answer => "answer",
            ResponseType::QuestionOnFocus => "question_on_focus",
            ResponseType::PartialRepeat => "partial_repeat",
            ResponseType::FollowUpQuestion => "follow_up_question",
            ResponseType::TopicIntroduction => "topic_introduction",
            ResponseType::FormulaicResponse => "formulaic_response",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaEntry {
    pub patterns: Vec<Vec<String>>,
    pub answer: String,
}

/// Handcrafted question-answer pairs.
///
/// File format: `Q:` lines give patterns, the following `A:` line closes the
/// entry with its answer. Blank lines and `#` comments are ignored.
///
/// ```text
/// Q: how is the weather
/// Q: what is the weather like
/// A: It's raining outside.
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaDatabase {
    pub entries: Vec<QaEntry>,
}

impl QaDatabase {
    pub fn parse(text: &str) -> Result<Self, ListenerError> {
        let mut entries = Vec::new();
        let mut patterns: Vec<Vec<String>> = Vec::new();
        let err = |line, message: &str| ListenerError::QaFormat {
            line,
            message: message.into(),
        };
        let mut last_q = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(q) = line.strip_prefix("Q:") {
                let toks = tokenize(q);
                if toks.is_empty() {
                    return Err(err(i + 1, "empty pattern"));
                }
                patterns.push(toks);
                last_q = i + 1;
            } else if let Some(a) = line.strip_prefix("A:") {
                if patterns.is_empty() {
                    return Err(err(i + 1, "answer without a pattern"));
                }
                let answer = a.trim();
                if answer.is_empty() {
                    return Err(err(i + 1, "empty answer"));
                }
                entries.push(QaEntry {
                    patterns: std::mem::take(&mut patterns),
                    answer: answer.to_string(),
                });
            } else {
                return Err(err(i + 1, "expected a line starting with Q: or A:"));
            }
        }
        if !patterns.is_empty() {
            return Err(err(last_q, "pattern without an answer"));
        }
        if entries.is_empty() {
            return Err(err(0, "no entries"));
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ListenerError> {
        Self::parse(&fs::read_to_string(path).map_err(|e| ListenerError::Io(e.to_string()))?)
    }

    /// Highest `|query ∩ pattern| / |pattern|` over all patterns, with the
    /// entry index. Ties keep the lower index.
    pub fn best_match(&self, tokens: &[String]) -> Option<(usize, f64)> {
        let query: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, entry) in self.entries.iter().enumerate() {
            for pattern in &entry.patterns {
                let distinct: HashSet<&str> = pattern.iter().map(String::as_str).collect();
                let hits = distinct.iter().filter(|t| query.contains(*t)).count();
                let score = hits as f64 / distinct.len() as f64;
                if best.map_or(true, |(_, s)| score > s) {
                    best = Some((i, score));
                }
            }
        }
        best
    }
}

/// Reads one topic question per line, skipping blanks and `#` comments.
pub fn parse_topics(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ListenerConfig {
    pub silence_threshold_s: f64,
    pub wh_threshold: f64,
    pub wh_words: Vec<String>,
    pub topics: Vec<String>,
    pub formulaic_responses: Vec<String>,
    /// `{wh}` and `{focus}` are substituted.
    pub focus_question_template: String,
    pub partial_repeat_template: String,
    pub follow_up_template: String,
    pub qa_match_threshold: f64,
    /// Consecutive unanswered prompts after which the session is flagged.
    pub breakdown_cap: u32,
}

impl Default for ListenerConfig {
    fn default() -> Self {
        Self {
            silence_threshold_s: 5.0,
            wh_threshold: 1e-4,
            wh_words: ["who", "what", "when", "where", "which"].map(String::from).to_vec(),
            topics: default_topics(),
            formulaic_responses: ["That's good.", "I see.", "Tell me more.", "That sounds nice."]
                .map(String::from)
                .to_vec(),
            focus_question_template: "{wh} {focus}?".into(),
            partial_repeat_template: "{focus}?".into(),
            follow_up_template: "What's your favorite {focus}?".into(),
            qa_match_threshold: 0.5,
            breakdown_cap: 5,
        }
    }
}

fn default_topics() -> Vec<String> {
    [
        "Do you like music?",
        "Do you have any pets?",
        "What did you have for breakfast?",
        "Where did you grow up?",
        "Do you like to cook?",
    ]
    .map(String::from)
    .to_vec()
}

impl ListenerConfig {
    pub fn validate(&self) -> Result<(), ListenerError> {
        let bad = |m: &str| Err(ListenerError::InvalidConfig(m.into()));
        if !(self.silence_threshold_s > 0.0 && self.silence_threshold_s.is_finite()) {
            return bad("silence threshold must be positive");
        }
        if !(self.wh_threshold > 0.0 && self.wh_threshold < 1.0) {
            return bad("wh threshold must lie in (0, 1)");
        }
        if self.wh_words.is_empty() || self.topics.is_empty() || self.formulaic_responses.is_empty() {
            return bad("wh words, topics and formulaic responses must be non-empty");
        }
        Ok(())
    }
}

/// Two-class GRU dialogue-act model over hashed word embeddings. Class 0 is
/// statement, class 1 is question.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueActModel {
    pub classifier: SequenceClassifier,
    pub embeddings: EmbeddingTable,
}

impl DialogueActModel {
    pub fn is_question(&self, tokens: &[String]) -> Result<bool, NeuralError> {
        let p = self.classifier.predict_proba(&embed_sequence(&self.embeddings, tokens))?;
        Ok(p.get(1).copied().unwrap_or(0.0) > p[0])
    }
}

/// Question if the raw text ends in `?`; otherwise the model decides when
/// given, else a question-word first token does.
pub fn tag_dialogue_act(
    tokens: &[String],
    raw_text: &str,
    model: Option<&DialogueActModel>,
) -> Result<DialogueAct, ListenerError> {
    if tokens.is_empty() {
        return Err(ListenerError::EmptyUtterance);
    }
    if raw_text.trim_end().ends_with('?') {
        return Ok(DialogueAct::Question);
    }
    let question = match model {
        Some(m) => m.is_question(tokens).unwrap_or(false),
        None => QUESTION_STARTERS.contains(&tokens[0].as_str()),
    };
    Ok(if question {
        DialogueAct::Question
    } else {
        DialogueAct::Statement
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerState {
    /// Most recent focus word that was questioned.
    pub last_topic: Option<String>,
    /// Most recent focus word of any statement.
    pub last_focus: Option<String>,
    /// 0 = armed, 1 = follow-up sent, 2+ = topic introductions sent.
    pub silence_stage: u32,
    pub silence_deadline: f64,
    pub topic_cursor: usize,
    pub formulaic_cursor: usize,
    /// Silence prompts since the last user utterance.
    pub unanswered_prompts: u32,
    pub breakdown: bool,
    /// Time of the latest processed event.
    pub clock: f64,
}

impl ListenerState {
    /// A fresh state whose silence watch is armed at `t0`.
    pub fn new(t0: f64, config: &ListenerConfig) -> Self {
        Self {
            last_topic: None,
            last_focus: None,
            silence_stage: 0,
            silence_deadline: t0 + config.silence_threshold_s,
            topic_cursor: 0,
            formulaic_cursor: 0,
            unanswered_prompts: 0,
            breakdown: false,
            clock: t0,
        }
    }

    /// Whether the silence watch has expired at `now`.
    pub fn silence_due(&self, now: f64) -> bool {
        now >= self.silence_deadline
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ListenerEvent {
    UserUtterance(Utterance),
    TimerExpired { at: f64 },
}

/// One robot utterance produced in answer to an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotAction {
    pub response_type: ResponseType,
    pub text: String,
    pub dialogue_act: DialogueAct,
    pub emitted_at: f64,
    /// Deadline of the silence watch armed by this action.
    pub silence_deadline: f64,
}

/// Static resources of the listener.
#[derive(Debug, Clone)]
pub struct Listener {
    pub config: ListenerConfig,
    pub qa: QaDatabase,
    pub bigram: BigramModel,
    pub act_model: Option<DialogueActModel>,
}

fn fill(template: &str, wh: &str, focus: &str) -> String {
    template.replace("{wh}", wh).replace("{focus}", focus)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn next_formulaic(state: &mut ListenerState, config: &ListenerConfig) -> (ResponseType, String) {
    let list = &config.formulaic_responses;
    let text = list[state.formulaic_cursor % list.len()].clone();
    state.formulaic_cursor = (state.formulaic_cursor + 1) % list.len();
    (ResponseType::FormulaicResponse, text)
}

fn next_topic(state: &mut ListenerState, config: &ListenerConfig) -> String {
    let list = &config.topics;
    let text = list[state.topic_cursor % list.len()].clone();
    state.topic_cursor = (state.topic_cursor + 1) % list.len();
    text
}

pub fn respond_to_question(
    db: &QaDatabase,
    tokens: &[String],
    config: &ListenerConfig,
    state: &mut ListenerState,
) -> (ResponseType, String) {
    match db.best_match(tokens) {
        Some((i, score)) if score >= config.qa_match_threshold => {
            (ResponseType::Answer, db.entries[i].answer.clone())
        }
        _ => next_formulaic(state, config),
    }
}

/// Largest `P(wh, focus)` over the configured question words; earlier words
/// win ties.
pub fn best_wh(bigram: &BigramModel, focus: &str, config: &ListenerConfig) -> (String, f64) {
    let mut best = (config.wh_words[0].clone(), f64::NEG_INFINITY);
    for wh in &config.wh_words {
        let p = bigram.joint_probability(wh, focus);
        if p > best.1 {
            best = (wh.clone(), p);
        }
    }
    best
}

pub fn respond_to_statement(
    state: &mut ListenerState,
    bigram: &BigramModel,
    tokens: &[String],
    raw_text: &str,
    config: &ListenerConfig,
) -> (ResponseType, String) {
    let Some(focus) = extract_focus(tokens, raw_text).focus else {
        return next_formulaic(state, config);
    };
    state.last_focus = Some(focus.clone());
    let (wh, p) = best_wh(bigram, &focus, config);
    if p >= config.wh_threshold {
        state.last_topic = Some(focus.clone());
        let text = fill(&config.focus_question_template, &capitalize(&wh), &focus);
        (ResponseType::QuestionOnFocus, text)
    } else {
        let text = fill(&config.partial_repeat_template, "", &capitalize(&focus));
        (ResponseType::PartialRepeat, text)
    }
}

/// Silence escalation: a follow-up on the last topic first, then topic
/// introductions in round-robin order.
pub fn on_silence_expiry(state: &mut ListenerState, config: &ListenerConfig) -> (ResponseType, String) {
    let out = if state.silence_stage == 0 {
        let text = match &state.last_topic {
            Some(topic) => fill(&config.follow_up_template, "", topic),
            None => next_topic(state, config),
        };
        (ResponseType::FollowUpQuestion, text)
    } else {
        (ResponseType::TopicIntroduction, next_topic(state, config))
    };
    state.silence_stage += 1;
    state.unanswered_prompts += 1;
    if state.unanswered_prompts >= config.breakdown_cap {
        state.breakdown = true;
    }
    out
}

impl Listener {
    pub fn new(config: ListenerConfig, qa: QaDatabase, bigram: BigramModel) -> Result<Self, ListenerError> {
        config.validate()?;
        Ok(Self {
            config,
            qa,
            bigram,
            act_model: None,
        })
    }

    pub fn initial_state(&self, t0: f64) -> ListenerState {
        ListenerState::new(t0, &self.config)
    }

    /// Pure transition: exactly one robot action per event.
    pub fn step(&self, state: &ListenerState, event: &ListenerEvent) -> Result<(ListenerState, RobotAction), ListenerError> {
        let mut next = state.clone();
        let (at, act, (response_type, text)) = match event {
            ListenerEvent::UserUtterance(u) => {
                if u.t_end < state.clock {
                    return Err(ListenerError::ClockRegression {
                        event: u.t_end,
                        clock: state.clock,
                    });
                }
                let act = tag_dialogue_act(&u.tokens, &u.raw_text, self.act_model.as_ref())?;
                next.silence_stage = 0;
                next.unanswered_prompts = 0;
                let reply = match act {
                    DialogueAct::Question => respond_to_question(&self.qa, &u.tokens, &self.config, &mut next),
                    _ => respond_to_statement(&mut next, &self.bigram, &u.tokens, &u.raw_text, &self.config),
                };
                (u.t_end, act, reply)
            }
            ListenerEvent::TimerExpired { at } => {
                if *at < state.clock {
                    return Err(ListenerError::ClockRegression {
                        event: *at,
                        clock: state.clock,
                    });
                }
                if !state.silence_due(*at) {
                    return Err(ListenerError::NotExpired {
                        at: *at,
                        deadline: state.silence_deadline,
                    });
                }
                (*at, DialogueAct::Silence, on_silence_expiry(&mut next, &self.config))
            }
        };
        next.clock = at;
        next.silence_deadline = at + self.config.silence_threshold_s;
        let action = RobotAction {
            response_type,
            text,
            dialogue_act: act,
            emitted_at: at,
            silence_deadline: next.silence_deadline,
        };
        Ok((next, action))
    }
}
