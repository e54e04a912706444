//! One screening session as a serialized event loop: user utterances and
//! clock ticks in; robot actions, silence watches, block verdicts and log
//! records out.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use adscreen_core::detectors::{detect_block, BlockVerdict, DetectorModels, PairAcoustics};
use adscreen_core::dialogue::{
    make_turn_pair, DialogueBlock, DialogueSession, Speaker, Utterance, PAIRS_PER_BLOCK,
};
use adscreen_core::listener::{
    parse_topics, DialogueActModel, Listener, ListenerConfig, ListenerEvent, ListenerState, QaDatabase,
    ResponseType, RobotAction,
};
use adscreen_core::neural::load_model;
use adscreen_core::signal::{analyze, AudioBuffer, FrameSpec, ProsodyConfig, ACOUSTIC_DIM};
use adscreen_core::text::{BigramModel, EmbeddingTable, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::audio::{decode_wav_b64, AudioInput};
use crate::config::ServiceConfig;
use crate::medical_log::{wall_time, BlockRecord, MedicalLogRecord, SessionSummary, TurnPairSummary};
use crate::protocol::ServerMessage;
use crate::ServiceError;

/// Shortest duration given to an utterance whose start time is estimated.
pub const MIN_ESTIMATED_DURATION_S: f64 = 0.5;
/// Upper bound on silence prompts fired by a single event.
const MAX_PROMPTS_PER_EVENT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Start {
        session_id: String,
        /// Wall-clock time of session second 0, seconds since the epoch.
        #[serde(default)]
        clock_origin: f64,
    },
    Utterance {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_start: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_end: Option<f64>,
        /// Session time at which the utterance reached the service.
        arrival: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        audio: Option<AudioInput>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        utterance_id: Option<String>,
    },
    Tick {
        now: f64,
    },
    End {
        at: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionOutput {
    Action(RobotAction),
    SilenceWatch { deadline_s: f64, stage: u32 },
    Diagnosis(BlockVerdict),
    Log(MedicalLogRecord),
}

impl SessionOutput {
    /// The wire message for this output, if it is sent to clients.
    pub fn to_message(&self) -> Option<ServerMessage> {
        match self {
            SessionOutput::Action(a) => Some(ServerMessage::Response {
                response_type: a.response_type,
                text: a.text.clone(),
            }),
            SessionOutput::SilenceWatch { deadline_s, stage } => Some(ServerMessage::SilenceWatch {
                deadline_s: *deadline_s,
                stage: *stage,
            }),
            SessionOutput::Diagnosis(v) => Some(ServerMessage::diagnosis(v)),
            SessionOutput::Log(_) => None,
        }
    }
}

/// Timing for an utterance: explicit times pass through; a missing end is
/// the arrival time; a missing start is estimated from the typing rate.
pub fn assign_times(
    text: &str,
    t_start: Option<f64>,
    t_end: Option<f64>,
    arrival: f64,
    typing_rate_wpm: f64,
) -> Result<Utterance, ServiceError> {
    let mut u = Utterance::new(Speaker::Human, text, 0.0, 0.0)?;
    if u.tokens.is_empty() {
        return Err(ServiceError::EmptyUtterance);
    }
    let end = t_end.unwrap_or(arrival);
    let start = t_start.unwrap_or_else(|| {
        let typing = u.word_count() as f64 / (typing_rate_wpm / 60.0);
        end - typing.max(MIN_ESTIMATED_DURATION_S)
    });
    if !(start.is_finite() && end.is_finite()) || end < start {
        return Err(ServiceError::ProtocolViolation(format!(
            "utterance ends at {end} before it starts at {start}"
        )));
    }
    u.t_start = start;
    u.t_end = end;
    Ok(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSettings {
    pub block_size: usize,
    pub typing_rate_wpm: f64,
    pub robot_rate_wpm: f64,
    pub pause_min_s: f64,
    pub audio_segment_s: f64,
    pub frame: FrameSpec,
    pub prosody: ProsodyConfig,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self::from(&ServiceConfig::default())
    }
}

impl From<&ServiceConfig> for SessionSettings {
    fn from(c: &ServiceConfig) -> Self {
        Self {
            block_size: c.block_size_pairs,
            typing_rate_wpm: c.typing_rate_wpm,
            robot_rate_wpm: c.robot_rate_wpm,
            pause_min_s: c.pause_min_s,
            audio_segment_s: c.audio_segment_s,
            frame: FrameSpec::default(),
            prosody: ProsodyConfig {
                vad_threshold_db: c.vad_threshold_db,
                ..ProsodyConfig::default()
            },
        }
    }
}

/// Everything a session reads and never writes.
#[derive(Debug, Clone)]
pub struct SessionResources {
    pub listener: Listener,
    pub models: DetectorModels,
    pub settings: SessionSettings,
    pub external_features: HashMap<String, Vec<f64>>,
}

/// Untrained detectors: every classifier outputs the uniform distribution.
pub fn placeholder_models(embeddings: EmbeddingTable) -> DetectorModels {
    DetectorModels::zeros(ACOUSTIC_DIM, embeddings, Vocabulary::from_tokens(Vec::new()), 1)
}

pub fn listener_config(cfg: &ServiceConfig) -> Result<ListenerConfig, ServiceError> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())));
    let mut lc = ListenerConfig {
        silence_threshold_s: cfg.silence_threshold_s,
        wh_threshold: cfg.wh_threshold,
        breakdown_cap: cfg.breakdown_cap,
        topics: parse_topics(&read(&cfg.topics)?),
        ..ListenerConfig::default()
    };
    if let Some(p) = &cfg.formulaic {
        lc.formulaic_responses = parse_topics(&read(p)?);
    }
    lc.validate()?;
    Ok(lc)
}

impl SessionResources {
    /// Loads the listener fixtures and, when `models_dir` holds trained
    /// detectors, the models. Without them the detectors are untrained.
    pub fn load(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let qa = QaDatabase::load(&cfg.qa_db)?;
        let bigram = BigramModel::from_corpus_file(&cfg.ngram_corpus)?;
        let mut listener = Listener::new(listener_config(cfg)?, qa, bigram)?;
        let embeddings = match &cfg.embeddings {
            Some(p) => Some(EmbeddingTable::load(p, cfg.embedding_seed)?),
            None => None,
        };
        let hashed = || EmbeddingTable::hashed(cfg.embedding_dim, cfg.embedding_seed);
        let models = match &cfg.models_dir {
            Some(dir) if dir.join("detectors.json").exists() => DetectorModels::load(dir, embeddings.clone())?,
            _ => {
                log::warn!("no trained detectors found; verdicts will come from untrained models");
                placeholder_models(embeddings.clone().unwrap_or_else(hashed))
            }
        };
        if let Some(dir) = &cfg.models_dir {
            let path = dir.join("dialogue_act.json");
            if path.exists() {
                listener.act_model = Some(DialogueActModel {
                    classifier: load_model(&path, 2)?,
                    embeddings: models.embeddings.clone(),
                });
            }
        }
        let external_features = match &cfg.external_features {
            Some(p) => crate::audio::load_external_features(p)?,
            None => HashMap::new(),
        };
        if cfg.block_size_pairs != PAIRS_PER_BLOCK {
            log::warn!("non-standard block size of {} turn-pairs", cfg.block_size_pairs);
        }
        Ok(Self {
            listener,
            models,
            settings: SessionSettings::from(cfg),
            external_features,
        })
    }

    /// Swaps in freshly trained detectors and dialogue-act model.
    pub fn with_trained(mut self, trained: &crate::training::TrainedModels) -> Self {
        self.models = trained.detectors.clone();
        self.listener.act_model = trained.dialogue_act.clone().map(|classifier| DialogueActModel {
            classifier,
            embeddings: trained.detectors.embeddings.clone(),
        });
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Active,
    Ended,
}

pub struct SessionRunner {
    res: Arc<SessionResources>,
    phase: Phase,
    session: DialogueSession,
    state: ListenerState,
    acoustics: Vec<PairAcoustics>,
    responses: Vec<ResponseType>,
    verdicts: Vec<BlockVerdict>,
}

impl SessionRunner {
    pub fn new(res: Arc<SessionResources>) -> Self {
        let state = res.listener.initial_state(0.0);
        let block = res.settings.block_size;
        Self {
            res,
            phase: Phase::Idle,
            session: DialogueSession::with_block_size("", 0.0, block),
            state,
            acoustics: Vec::new(),
            responses: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    pub fn session_id(&self) -> &str {
        &self.session.session_id
    }

    pub fn session(&self) -> &DialogueSession {
        &self.session
    }

    pub fn listener_state(&self) -> &ListenerState {
        &self.state
    }

    pub fn verdicts(&self) -> &[BlockVerdict] {
        &self.verdicts
    }

    pub fn responses(&self) -> &[ResponseType] {
        &self.responses
    }

    pub fn is_active(&self) -> bool {
        self.phase == Phase::Active
    }

    /// Completed blocks with the acoustic inputs of their pairs.
    pub fn blocks_with_acoustics(&self) -> Vec<(DialogueBlock, Vec<PairAcoustics>)> {
        let size = self.session.block_size();
        self.session
            .completed_blocks()
            .iter()
            .map(|b| {
                let start = b.block_index() * size;
                (b.clone(), self.acoustics[start..start + b.len()].to_vec())
            })
            .collect()
    }

    pub fn handle(&mut self, event: &SessionEvent) -> Result<Vec<SessionOutput>, ServiceError> {
        match (self.phase, event) {
            (Phase::Idle, SessionEvent::Start { session_id, clock_origin }) => {
                self.session =
                    DialogueSession::with_block_size(session_id.clone(), *clock_origin, self.res.settings.block_size);
                self.state = self.res.listener.initial_state(0.0);
                self.phase = Phase::Active;
                Ok(vec![self.watch()])
            }
            (Phase::Active, SessionEvent::Tick { now }) => {
                let mut out = Vec::new();
                if *now >= self.state.clock {
                    self.fire_due(*now, &mut out)?;
                }
                Ok(out)
            }
            (
                Phase::Active,
                SessionEvent::Utterance {
                    text,
                    t_start,
                    t_end,
                    arrival,
                    audio,
                    utterance_id,
                },
            ) => self.on_utterance(text, *t_start, *t_end, *arrival, audio.as_ref(), utterance_id.as_deref()),
            (Phase::Active, SessionEvent::End { at }) => {
                self.phase = Phase::Ended;
                let at = at.max(self.state.clock);
                Ok(vec![SessionOutput::Log(MedicalLogRecord::SessionSummary(SessionSummary {
                    wall_time: wall_time(self.session.clock_origin, at),
                    session_id: self.session.session_id.clone(),
                    turn_pairs: self.session.pairs().len(),
                    blocks: self.verdicts.len(),
                    finals: self.verdicts.iter().map(|v| v.final_degree).collect(),
                    breakdown_flag: self.state.breakdown,
                    duration_s: at,
                }))])
            }
            (phase, e) => Err(ServiceError::ProtocolViolation(format!(
                "{} not allowed {}",
                event_name(e),
                match phase {
                    Phase::Idle => "before the session starts",
                    Phase::Active => "during the session",
                    Phase::Ended => "after the session ended",
                }
            ))),
        }
    }

    fn watch(&self) -> SessionOutput {
        SessionOutput::SilenceWatch {
            deadline_s: self.state.silence_deadline,
            stage: self.state.silence_stage,
        }
    }

    fn robot_utterance(&self, action: &RobotAction) -> Result<Utterance, ServiceError> {
        let words = adscreen_core::text::tokenize(&action.text).len() as f64;
        let dur = words / (self.res.settings.robot_rate_wpm / 60.0);
        Ok(Utterance::new(Speaker::Robot, action.text.clone(), action.emitted_at, action.emitted_at + dur)?)
    }

    fn last_robot(&self) -> Option<&Utterance> {
        self.session.pairs().last().map(|p| &p.robot)
    }

    /// Fires every silence deadline at or before `limit`.
    fn fire_due(&mut self, limit: f64, out: &mut Vec<SessionOutput>) -> Result<(), ServiceError> {
        let mut fired = 0;
        while self.state.silence_due(limit) {
            if fired == MAX_PROMPTS_PER_EVENT {
                log::warn!("session {}: silence prompt limit reached", self.session.session_id);
                break;
            }
            fired += 1;
            let at = self.state.silence_deadline;
            let (next, action) = self.res.listener.step(&self.state, &ListenerEvent::TimerExpired { at })?;
            let start = self.last_robot().map_or(0.0, |r| r.t_end).min(at);
            let human = Utterance::silence(start, at)?;
            self.state = next;
            self.complete_pair(human, action, PairAcoustics::text_only(), out)?;
        }
        Ok(())
    }

    fn on_utterance(
        &mut self,
        text: &str,
        t_start: Option<f64>,
        t_end: Option<f64>,
        arrival: f64,
        audio: Option<&AudioInput>,
        utterance_id: Option<&str>,
    ) -> Result<Vec<SessionOutput>, ServiceError> {
        let arrival = arrival.max(self.state.clock);
        let mut human = assign_times(text, t_start, t_end, arrival, self.res.settings.typing_rate_wpm)?;
        if human.t_end < self.state.clock {
            return Err(ServiceError::ProtocolViolation(format!(
                "utterance ends at {} before the last robot action at {}",
                human.t_end, self.state.clock
            )));
        }
        let analysis = match audio {
            Some(AudioInput::Wav { b64 }) => Some(self.analyze(&decode_wav_b64(b64)?)?),
            Some(AudioInput::Tone(recipe)) => Some(self.analyze(&recipe.render())?),
            _ => None,
        };

        let mut out = Vec::new();
        self.fire_due(human.t_start, &mut out)?;
        if let Some(r) = self.last_robot() {
            human.t_start = human.t_start.max(r.t_start).min(human.t_end);
        }
        let s = &self.res.settings;
        let acoustics = match (analysis, audio) {
            (Some(a), _) => PairAcoustics::from_analysis(
                &a,
                human.word_count(),
                human.t_start,
                s.audio_segment_s,
                s.prosody.vad_threshold_db,
                s.pause_min_s,
            ),
            (None, Some(AudioInput::Features { values })) => PairAcoustics::from_vector(values.clone()),
            _ => match utterance_id.and_then(|id| self.res.external_features.get(id)) {
                Some(v) => PairAcoustics::from_vector(v.clone()),
                None => PairAcoustics::text_only(),
            },
        };
        let (next, action) = self.res.listener.step(&self.state, &ListenerEvent::UserUtterance(human.clone()))?;
        self.state = next;
        self.complete_pair(human, action, acoustics, &mut out)?;
        Ok(out)
    }

    fn analyze(&self, buf: &AudioBuffer) -> Result<adscreen_core::signal::Analysis, ServiceError> {
        analyze(buf, &self.res.settings.frame, &self.res.settings.prosody).map_err(|e| ServiceError::Audio(e.to_string()))
    }

    fn complete_pair(
        &mut self,
        human: Utterance,
        action: RobotAction,
        acoustics: PairAcoustics,
        out: &mut Vec<SessionOutput>,
    ) -> Result<(), ServiceError> {
        let robot = self.robot_utterance(&action)?;
        let pair = make_turn_pair(human, robot, self.session.next_index())?;
        self.session.push_pair(pair)?;
        self.acoustics.push(acoustics);
        self.responses.push(action.response_type);
        out.push(SessionOutput::Action(action));
        out.push(self.watch());
        if let Some(block) = self.session.close_block() {
            let start = block.block_index() * self.session.block_size();
            let verdict = detect_block(&block, &self.res.models, &self.acoustics[start..start + block.len()])?;
            out.push(SessionOutput::Diagnosis(verdict.clone()));
            out.push(SessionOutput::Log(self.block_record(&block, &verdict)));
            self.verdicts.push(verdict);
        }
        Ok(())
    }

    fn block_record(&self, block: &DialogueBlock, v: &BlockVerdict) -> MedicalLogRecord {
        let at = block.pairs().last().map_or(0.0, |p| p.robot.t_start);
        MedicalLogRecord::Block(BlockRecord {
            wall_time: wall_time(self.session.clock_origin, at),
            session_id: self.session.session_id.clone(),
            block_index: v.block_index,
            turn_pairs: block
                .pairs()
                .iter()
                .map(|p| TurnPairSummary {
                    index: p.index,
                    human_text: p.human.raw_text.clone(),
                    human_t_start: p.human.t_start,
                    human_t_end: p.human.t_end,
                    robot_text: p.robot.raw_text.clone(),
                    robot_t_start: p.robot.t_start,
                    robot_t_end: p.robot.t_end,
                    response_type: self.responses[p.index],
                })
                .collect(),
            per_classifier: v.per_classifier.clone(),
            votes: v.votes,
            final_degree: v.final_degree,
            interactional: v.features,
            disfluencies: v.disfluencies,
            tie_broken: v.tie_broken,
            breakdown_flag: self.state.breakdown,
            non_standard_block: block.len() != PAIRS_PER_BLOCK,
        })
    }
}

fn event_name(e: &SessionEvent) -> &'static str {
    match e {
        SessionEvent::Start { .. } => "start",
        SessionEvent::Utterance { .. } => "utterance",
        SessionEvent::Tick { .. } => "tick",
        SessionEvent::End { .. } => "end",
    }
}

/// Replays a complete event stream. The stream must begin with `Start` and
/// end with `End`.
pub fn run_session(events: &[SessionEvent], res: Arc<SessionResources>) -> Result<Vec<SessionOutput>, ServiceError> {
    Ok(replay(events, res)?.1)
}

/// Like [`run_session`], also returning the finished runner.
pub fn replay(
    events: &[SessionEvent],
    res: Arc<SessionResources>,
) -> Result<(SessionRunner, Vec<SessionOutput>), ServiceError> {
    if !matches!(events.first(), Some(SessionEvent::Start { .. })) {
        return Err(ServiceError::ProtocolViolation("stream must begin with start".into()));
    }
    if !matches!(events.last(), Some(SessionEvent::End { .. })) {
        return Err(ServiceError::ProtocolViolation("stream must end with end".into()));
    }
    let mut runner = SessionRunner::new(res);
    let mut out = Vec::new();
    for e in events {
        out.extend(runner.handle(e)?);
    }
    Ok((runner, out))
}
