//! Fitting the detectors on a labeled corpus. Sessions are replayed to
//! recover their blocks and acoustic inputs; every utterance inherits the
//! label of its session.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use adscreen_core::detectors::{disfluency_features, DetectorModels, InteractionalFeatures, LinearSoftmaxModel, LinearTrainConfig, PairAcoustics};
use adscreen_core::dialogue::{DialogueBlock, DiagnosisDegree};
use adscreen_core::neural::{
    accuracy, load_model, save_model, train, BiGruClassifier, Example, SequenceClassifier, Standardizer, TrainConfig,
};
use adscreen_core::text::{embed_sequence, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::session::{replay, SessionResources};
use crate::simulator::{ManifestRow, ScriptedSession};
use crate::ServiceError;

pub const DIALOGUE_ACT_FILE: &str = "dialogue_act.json";
pub const REPORT_FILE: &str = "training_report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    Audio,
    Language,
    Disfluency,
    Interactivity,
    DialogueAct,
}

impl TrainTarget {
    pub const ALL: [TrainTarget; 5] = [
        TrainTarget::Audio,
        TrainTarget::Language,
        TrainTarget::Disfluency,
        TrainTarget::Interactivity,
        TrainTarget::DialogueAct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainTarget::Audio => "audio",
            TrainTarget::Language => "language",
            TrainTarget::Disfluency => "disfluency",
            TrainTarget::Interactivity => "interactivity",
            TrainTarget::DialogueAct => "dialogue_act",
        }
    }

    /// One target by name, or every target for `all`.
    pub fn parse_set(s: &str) -> Result<Vec<TrainTarget>, ServiceError> {
        if s == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.parse().map(|t| vec![t])
    }
}

impl FromStr for TrainTarget {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ServiceError::Config(format!("unknown classifier {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub linear: LinearTrainConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 12,
            seed: 42,
            hidden: 8,
            learning_rate: 0.1,
            batch_size: 8,
            linear: LinearTrainConfig::default(),
        }
    }
}

/// A completed block with the acoustic inputs of its pairs.
#[derive(Debug, Clone)]
pub struct LabeledBlock {
    pub session_id: String,
    pub label: DiagnosisDegree,
    pub block: DialogueBlock,
    pub acoustics: Vec<PairAcoustics>,
}

/// A labeled utterance for the dialogue-act model.
#[derive(Debug, Clone, PartialEq)]
pub struct ActExample {
    pub tokens: Vec<String>,
    pub is_question: bool,
}

/// Maps `f` over `items` on every available core, keeping input order.
pub(crate) fn par_map<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<R, ServiceError> + Sync,
) -> Result<Vec<R>, ServiceError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Result<Vec<R>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker thread panicked")?);
        }
        Ok(out)
    })
}

/// Replays every session and gathers its completed blocks.
pub fn collect_blocks(
    corpus: &[(ManifestRow, ScriptedSession)],
    resources: &Arc<SessionResources>,
) -> Result<Vec<LabeledBlock>, ServiceError> {
    let per_session = par_map(corpus, |(row, session)| {
        let (runner, _) = replay(&session.events, resources.clone())?;
        Ok(runner
            .blocks_with_acoustics()
            .into_iter()
            .map(|(block, acoustics)| LabeledBlock {
                session_id: session.session_id.clone(),
                label: row.label,
                block,
                acoustics,
            })
            .collect::<Vec<_>>())
    })?;
    Ok(per_session.into_iter().flatten().collect())
}

/// Spoken utterances and whether each was generated as a question.
pub fn collect_acts(corpus: &[(ManifestRow, ScriptedSession)]) -> Vec<ActExample> {
    let mut out = Vec::new();
    for (_, s) in corpus {
        let mut spoken = s.annotations.iter().filter(|a| !a.silent);
        for e in &s.events {
            if let crate::session::SessionEvent::Utterance { text, .. } = e {
                let tokens = adscreen_core::text::tokenize(text);
                let is_question = spoken.next().map_or(text.trim_end().ends_with('?'), |a| a.is_question);
                if !tokens.is_empty() {
                    out.push(ActExample { tokens, is_question });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub target: TrainTarget,
    pub examples: usize,
    pub final_loss: Option<f64>,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub options: TrainOptions,
    pub blocks: usize,
    pub targets: Vec<TargetReport>,
}

#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub detectors: DetectorModels,
    pub dialogue_act: Option<SequenceClassifier>,
}

impl TrainedModels {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), ServiceError> {
        let dir = dir.as_ref();
        self.detectors.save(dir)?;
        if let Some(m) = &self.dialogue_act {
            save_model(m, dir.join(DIALOGUE_ACT_FILE))?;
        }
        Ok(())
    }

    /// Loads a models directory written by [`TrainedModels::save`].
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ServiceError> {
        let dir = dir.as_ref();
        let detectors = DetectorModels::load(dir, None)?;
        let path = dir.join(DIALOGUE_ACT_FILE);
        let dialogue_act = if path.exists() { Some(load_model(&path, 2)?) } else { None };
        Ok(Self { detectors, dialogue_act })
    }
}

fn fit(
    target: TrainTarget,
    examples: Vec<Example>,
    classes: usize,
    standardize: bool,
    opts: &TrainOptions,
) -> Result<(SequenceClassifier, TargetReport), ServiceError> {
    if examples.is_empty() {
        return Err(ServiceError::Simulation(format!("no training examples for {}", target.as_str())));
    }
    let dim = examples[0].xs[0].len();
    let standardizer = standardize.then(|| Standardizer::fit(examples.iter().map(|e| &e.xs[..]), dim));
    let examples: Vec<Example> = match &standardizer {
        Some(s) => examples
            .into_iter()
            .map(|e| Example {
                xs: s.apply_seq(&e.xs),
                label: e.label,
            })
            .collect(),
        None => examples,
    };
    let seed = opts.seed.wrapping_add(target as u64);
    let init = BiGruClassifier::random(dim, opts.hidden, classes, seed);
    let cfg = TrainConfig {
        learning_rate: opts.learning_rate,
        epochs: opts.epochs,
        batch_size: opts.batch_size,
        seed,
        ..TrainConfig::default()
    };
    let (net, history) = train(&init, &examples, &cfg)?;
    let report = TargetReport {
        target,
        examples: examples.len(),
        final_loss: history.last().copied(),
        train_accuracy: accuracy(&net, &examples)?,
    };
    log::info!(
        "{}: {} examples, loss {:?}, train accuracy {:.3}",
        target.as_str(),
        report.examples,
        report.final_loss,
        report.train_accuracy
    );
    Ok((SequenceClassifier { net, standardizer }, report))
}

/// Trains the requested targets, starting from `base` for the others.
pub fn train_models(
    blocks: &[LabeledBlock],
    acts: &[ActExample],
    base: TrainedModels,
    targets: &[TrainTarget],
    opts: &TrainOptions,
) -> Result<(TrainedModels, TrainReport), ServiceError> {
    let targets: BTreeSet<_> = targets.iter().copied().collect();
    let mut out = base;
    let mut reports = Vec::new();
    let pairs = || {
        blocks
            .iter()
            .flat_map(|b| b.block.pairs().iter().zip(&b.acoustics).map(move |(p, a)| (p, a, b.label.index())))
    };

    if targets.contains(&TrainTarget::Audio) {
        let examples: Vec<Example> = pairs()
            .filter(|(_, a, _)| !a.segments.is_empty())
            .map(|(_, a, label)| Example {
                xs: a.segments.clone(),
                label,
            })
            .collect();
        let (m, r) = fit(TrainTarget::Audio, examples, 4, true, opts)?;
        out.detectors.audio = m;
        reports.push(r);
    }
    if targets.contains(&TrainTarget::Language) {
        let emb = &out.detectors.embeddings;
        let examples: Vec<Example> = pairs()
            .filter(|(p, _, _)| !p.human.tokens.is_empty())
            .map(|(p, _, label)| Example {
                xs: embed_sequence(emb, &p.human.tokens),
                label,
            })
            .collect();
        let (m, r) = fit(TrainTarget::Language, examples, 4, false, opts)?;
        out.detectors.language = m;
        reports.push(r);
    }
    if targets.contains(&TrainTarget::Disfluency) {
        let vocab = Vocabulary::build(pairs().flat_map(|(p, _, _)| p.human.tokens.iter().map(String::as_str)), 2);
        let examples = pairs()
            .filter(|(p, _, _)| !p.human.tokens.is_empty())
            .map(|(p, a, label)| {
                Ok(Example {
                    xs: disfluency_features(&vocab, &p.human.tokens, a.token_prosody.as_deref())?,
                    label,
                })
            })
            .collect::<Result<Vec<_>, ServiceError>>()?;
        let (m, r) = fit(TrainTarget::Disfluency, examples, 4, true, opts)?;
        out.detectors.disfluency = m;
        out.detectors.vocab = vocab;
        reports.push(r);
    }
    if targets.contains(&TrainTarget::Interactivity) {
        let examples = blocks
            .iter()
            .map(|b| {
                let pauses = if b.acoustics.iter().any(|a| a.has_audio) {
                    b.acoustics.iter().flat_map(|a| a.pauses.iter().copied()).collect()
                } else {
                    adscreen_core::detectors::text_mode_pauses(&b.block, adscreen_core::detectors::TEXT_PAUSE_MAX_S)
                };
                Ok((
                    adscreen_core::detectors::compute_interactional_features(&b.block, &pauses)?,
                    b.label,
                ))
            })
            .collect::<Result<Vec<(InteractionalFeatures, DiagnosisDegree)>, ServiceError>>()?;
        let model = LinearSoftmaxModel::train(&examples, &opts.linear)?;
        let hits = examples
            .iter()
            .filter(|(f, l)| adscreen_core::detectors::interactivity_classify(&model, f).argmax() == *l)
            .count();
        reports.push(TargetReport {
            target: TrainTarget::Interactivity,
            examples: examples.len(),
            final_loss: None,
            train_accuracy: hits as f64 / examples.len().max(1) as f64,
        });
        out.detectors.interactivity = model;
    }
    if targets.contains(&TrainTarget::DialogueAct) {
        let emb = &out.detectors.embeddings;
        let examples: Vec<Example> = acts
            .iter()
            .map(|a| Example {
                xs: embed_sequence(emb, &a.tokens),
                label: usize::from(a.is_question),
            })
            .collect();
        let (m, r) = fit(TrainTarget::DialogueAct, examples, 2, false, opts)?;
        out.dialogue_act = Some(m);
        reports.push(r);
    }
    Ok((
        out,
        TrainReport {
            options: *opts,
            blocks: blocks.len(),
            targets: reports,
        },
    ))
}
