//! The four-classifier ensemble and its two-stage fusion.
//!
//! Audio, language and disfluency classifiers score each human utterance of a
//! block; their six distributions are averaged per classifier. The
//! interactivity classifier scores the block once from five interactional
//! features. A plurality vote over the four results gives the verdict.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DegreeDistribution, DiagnosisDegree, DialogueBlock, PAIRS_PER_BLOCK};
use crate::neural::{load_model, save_model, NeuralError, SequenceClassifier};
use crate::signal::Analysis;
use crate::text::{embed_sequence, is_filler, one_hot_sequence, EmbeddingTable, Vocabulary};

/// Number of interactional features.
pub const N_INTERACTIONAL: usize = 5;
/// Inter-utterance gaps at or above this are silences, not pauses.
pub const TEXT_PAUSE_MAX_S: f64 = 5.0;
/// Prosodic values appended to each one-hot token vector.
pub const PROSODY_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("block has no turn-pairs")]
    EmptyBlock,
    #[error("expected {expected} inputs, got {found}")]
    WrongArity { expected: usize, found: usize },
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("non-finite interactional feature")]
    NonFinite,
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("model file format mismatch: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Audio,
    Language,
    Disfluency,
    Interactivity,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 4] = [
        ClassifierKind::Audio,
        ClassifierKind::Language,
        ClassifierKind::Disfluency,
        ClassifierKind::Interactivity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Audio => "audio",
            ClassifierKind::Language => "language",
            ClassifierKind::Disfluency => "disfluency",
            ClassifierKind::Interactivity => "interactivity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionalFeatures {
    /// Human words per turn.
    pub turn_length_mean: f64,
    /// Human speech time over human plus robot speech time.
    pub floor_control_ratio: f64,
    /// Human words per pause.
    pub standardized_pause_rate: f64,
    /// Speech time over speech plus pause time.
    pub phonation_rate: f64,
    /// Human words per minute of speech plus pause time.
    pub speaking_rate: f64,
}

impl InteractionalFeatures {
    pub fn to_array(&self) -> [f64; N_INTERACTIONAL] {
        [
            self.turn_length_mean,
            self.floor_control_ratio,
            self.standardized_pause_rate,
            self.phonation_rate,
            self.speaking_rate,
        ]
    }
}

/// A pause on the session clock. `within_turn` pauses lie inside a human
/// utterance's audio and are subtracted from its speech time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pause {
    pub t_start: f64,
    pub t_end: f64,
    pub within_turn: bool,
}

impl Pause {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Gaps between a robot turn and the next human reply, for consecutive
/// non-silent human turns, that are shorter than `max_gap_s`.
pub fn text_mode_pauses(block: &DialogueBlock, max_gap_s: f64) -> Vec<Pause> {
    block
        .pairs()
        .windows(2)
        .filter(|w| !w[0].human.is_silence() && !w[1].human.is_silence())
        .filter_map(|w| {
            let (t0, t1) = (w[0].robot.t_end, w[1].human.t_start);
            let gap = t1 - t0;
            (gap > 0.0 && gap < max_gap_s).then_some(Pause {
                t_start: t0,
                t_end: t1,
                within_turn: false,
            })
        })
        .collect()
}

/// Voice-inactive runs inside one utterance's audio, moved onto the session
/// clock by `offset_s`.
pub fn audio_pauses(analysis: &Analysis, offset_s: f64, vad_threshold_db: f64, min_pause_s: f64) -> Vec<Pause> {
    analysis
        .pauses(vad_threshold_db, min_pause_s)
        .into_iter()
        .map(|(a, b)| Pause {
            t_start: offset_s + a,
            t_end: offset_s + b,
            within_turn: true,
        })
        .collect()
}

pub fn compute_interactional_features(
    block: &DialogueBlock,
    pauses: &[Pause],
) -> Result<InteractionalFeatures, DetectorError> {
    if block.is_empty() {
        return Err(DetectorError::EmptyBlock);
    }
    let words: usize = block.pairs().iter().map(|p| p.human.word_count()).sum();
    let words = words as f64;
    let raw_speech: f64 = block
        .pairs()
        .iter()
        .filter(|p| !p.human.is_silence())
        .map(|p| p.human.duration())
        .sum();
    let internal: f64 = pauses.iter().filter(|p| p.within_turn).map(Pause::duration).sum();
    let speech = (raw_speech - internal).max(0.0);
    let pause_time: f64 = pauses.iter().map(Pause::duration).sum();
    let robot: f64 = block.pairs().iter().map(|p| p.robot.duration()).sum();

    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let f = InteractionalFeatures {
        turn_length_mean: words / block.len() as f64,
        floor_control_ratio: ratio(speech, speech + robot),
        standardized_pause_rate: words / pauses.len().max(1) as f64,
        phonation_rate: ratio(speech, speech + pause_time),
        speaking_rate: ratio(words, (speech + pause_time) / 60.0),
    };
    if f.to_array().iter().all(|v| v.is_finite()) {
        Ok(f)
    } else {
        Err(DetectorError::NonFinite)
    }
}

/// Multinomial logistic model over standardized interactional features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSoftmaxModel {
    pub weights: [[f64; N_INTERACTIONAL]; 4],
    pub bias: [f64; 4],
    pub mean: [f64; N_INTERACTIONAL],
    pub std: [f64; N_INTERACTIONAL],
}

impl Default for LinearSoftmaxModel {
    fn default() -> Self {
        Self {
            weights: [[0.0; N_INTERACTIONAL]; 4],
            bias: [0.0; 4],
            mean: [0.0; N_INTERACTIONAL],
            std: [1.0; N_INTERACTIONAL],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LinearTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 500,
            l2: 1e-3,
        }
    }
}

const LINEAR_FORMAT: &str = "adscreen-linear";
const LINEAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LinearFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: LinearSoftmaxModel,
}

impl LinearSoftmaxModel {
    fn standardize(&self, f: &[f64; N_INTERACTIONAL]) -> [f64; N_INTERACTIONAL] {
        std::array::from_fn(|i| (f[i] - self.mean[i]) / self.std[i])
    }

    pub fn logits(&self, f: &InteractionalFeatures) -> [f64; 4] {
        let x = self.standardize(&f.to_array());
        std::array::from_fn(|c| self.bias[c] + self.weights[c].iter().zip(&x).map(|(w, v)| w * v).sum::<f64>())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().chain(&self.bias).chain(&self.mean).all(|v| v.is_finite())
            && self.std.iter().all(|s| s.is_finite() && *s > 0.0)
    }

    /// Full-batch gradient descent on mean cross-entropy with an L2 penalty
    /// on the weights. Standardization constants come from `examples`.
    pub fn train(
        examples: &[(InteractionalFeatures, DiagnosisDegree)],
        cfg: &LinearTrainConfig,
    ) -> Result<Self, DetectorError> {
        if examples.is_empty() {
            return Err(DetectorError::Neural(NeuralError::EmptyDataset));
        }
        let n = examples.len() as f64;
        let rows: Vec<[f64; N_INTERACTIONAL]> = examples.iter().map(|(f, _)| f.to_array()).collect();
        let mut model = Self::default();
        for i in 0..N_INTERACTIONAL {
            let mean = rows.iter().map(|r| r[i]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n;
            model.mean[i] = mean;
            model.std[i] = if var.sqrt() < 1e-8 { 1.0 } else { var.sqrt() };
        }
        let xs: Vec<[f64; N_INTERACTIONAL]> = rows.iter().map(|r| model.standardize(r)).collect();
        for _ in 0..cfg.epochs {
            let mut gw = [[0.0; N_INTERACTIONAL]; 4];
            let mut gb = [0.0; 4];
            for (x, (_, label)) in xs.iter().zip(examples) {
                let logits: [f64; 4] = std::array::from_fn(|c| {
                    model.bias[c] + model.weights[c].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                });
                let p = crate::neural::softmax(&logits);
                for c in 0..4 {
                    let d = p[c] - if c == label.index() { 1.0 } else { 0.0 };
                    gb[c] += d / n;
                    for i in 0..N_INTERACTIONAL {
                        gw[c][i] += d * x[i] / n;
                    }
                }
            }
            for c in 0..4 {
                model.bias[c] -= cfg.learning_rate * gb[c];
                for i in 0..N_INTERACTIONAL {
                    model.weights[c][i] -= cfg.learning_rate * (gw[c][i] + cfg.l2 * model.weights[c][i]);
                }
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DetectorError> {
        let file = LinearFile {
            format: LINEAR_FORMAT.into(),
            version: LINEAR_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file).map_err(|e| DetectorError::Format(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectorError> {
        let text = fs::read_to_string(path)?;
        let file: LinearFile =
            serde_json::from_str(&text).map_err(|e| DetectorError::Format(format!("unreadable linear model: {e}")))?;
        if file.format != LINEAR_FORMAT || file.version != LINEAR_VERSION {
            return Err(DetectorError::Format(format!(
                "expected {LINEAR_FORMAT} v{LINEAR_VERSION}, found {} v{}",
                file.format, file.version
            )));
        }
        if !file.model.is_finite() {
            return Err(DetectorError::Format("non-finite parameters".into()));
        }
        Ok(file.model)
    }
}

pub fn interactivity_classify(model: &LinearSoftmaxModel, f: &InteractionalFeatures) -> DegreeDistribution {
    let p = crate::neural::softmax(&model.logits(f));
    renormalized([p[0], p[1], p[2], p[3]])
}

fn renormalized(p: [f64; 4]) -> DegreeDistribution {
    let mass: f64 = p.iter().sum();
    DegreeDistribution::new(p.map(|v| v / mass)).expect("softmax output is a distribution")
}

pub fn audio_classify(model: &SequenceClassifier, frames: &[Vec<f64>]) -> Result<DegreeDistribution, DetectorError> {
    Ok(model.classify(frames)?)
}

pub fn language_classify(
    model: &SequenceClassifier,
    embedded: &[Vec<f64>],
) -> Result<DegreeDistribution, DetectorError> {
    Ok(model.classify(embedded)?)
}

pub fn disfluency_classify(model: &SequenceClassifier, fused: &[Vec<f64>]) -> Result<DegreeDistribution, DetectorError> {
    Ok(model.classify(fused)?)
}

/// One-hot token vectors, each followed by that token's prosody (zeros when
/// `prosody` is `None`).
pub fn disfluency_features(
    vocab: &Vocabulary,
    tokens: &[String],
    prosody: Option<&[[f64; PROSODY_DIM]]>,
) -> Result<Vec<Vec<f64>>, DetectorError> {
    if let Some(p) = prosody {
        if p.len() != tokens.len() {
            return Err(DetectorError::Alignment(format!(
                "{} tokens but {} prosody spans",
                tokens.len(),
                p.len()
            )));
        }
    }
    Ok(one_hot_sequence(vocab, tokens)
        .into_iter()
        .enumerate()
        .map(|(i, mut v)| {
            v.extend(prosody.map_or([0.0; PROSODY_DIM], |p| p[i]));
            v
        })
        .collect())
}

/// Splits `[0, duration_s)` into `n` equal token spans.
pub fn uniform_token_spans(n: usize, duration_s: f64) -> Vec<(f64, f64)> {
    let w = duration_s / n.max(1) as f64;
    (0..n).map(|i| (i as f64 * w, (i + 1) as f64 * w)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisfluencyInventory {
    pub restart: usize,
    pub repetition: usize,
    pub correction: usize,
    pub filler: usize,
}

impl std::ops::AddAssign for DisfluencyInventory {
    fn add_assign(&mut self, o: Self) {
        self.restart += o.restart;
        self.repetition += o.repetition;
        self.correction += o.correction;
        self.filler += o.filler;
    }
}

pub fn count_disfluencies(tokens: &[String]) -> DisfluencyInventory {
    let mut inv = DisfluencyInventory::default();
    for (i, t) in tokens.iter().enumerate() {
        if is_filler(t) {
            inv.filler += 1;
        }
        if t.len() > 1 && t.ends_with('-') {
            inv.restart += 1;
        }
        if i > 0 && tokens[i - 1] == *t {
            inv.repetition += 1;
        }
        let rest = tokens.len() - i - 1;
        let marker = match t.as_str() {
            "no" | "sorry" => rest >= 1,
            "i" => rest >= 2 && tokens[i + 1] == "mean",
            _ => false,
        };
        if marker {
            inv.correction += 1;
        }
    }
    inv
}

/// Component-wise mean of exactly six distributions.
pub fn stage1_average(six: &[DegreeDistribution]) -> Result<DegreeDistribution, DetectorError> {
    if six.len() != PAIRS_PER_BLOCK {
        return Err(DetectorError::WrongArity {
            expected: PAIRS_PER_BLOCK,
            found: six.len(),
        });
    }
    average(six)
}

/// Component-wise mean of any non-empty set; used for non-standard block
/// sizes.
pub fn average(ds: &[DegreeDistribution]) -> Result<DegreeDistribution, DetectorError> {
    if ds.is_empty() {
        return Err(DetectorError::WrongArity { expected: 1, found: 0 });
    }
    let mut sum = [0.0; 4];
    for d in ds {
        for (s, p) in sum.iter_mut().zip(d.probs()) {
            *s += p;
        }
    }
    Ok(renormalized(sum.map(|s| s / ds.len() as f64)))
}

/// Plurality vote over four labelled results. Ties among the top vote
/// counts go to the tied label with the largest summed probability, then to
/// the most severe tied label. The flag is set when the vote needed a tie
/// rule or when any input distribution had a tied maximum.
pub fn stage2_vote(results: &[(DiagnosisDegree, DegreeDistribution)]) -> Result<(DiagnosisDegree, bool), DetectorError> {
    if results.len() != 4 {
        return Err(DetectorError::WrongArity {
            expected: 4,
            found: results.len(),
        });
    }
    let mut counts = [0usize; 4];
    let mut mass = [0.0; 4];
    for (label, dist) in results {
        counts[label.index()] += 1;
        for (m, p) in mass.iter_mut().zip(dist.probs()) {
            *m += p;
        }
    }
    let top = *counts.iter().max().expect("four labels");
    let tied: Vec<usize> = (0..4).filter(|&i| counts[i] == top).collect();
    let argmax_tie = results.iter().any(|(_, d)| has_tied_max(d));
    if tied.len() == 1 {
        return Ok((DiagnosisDegree::ALL[tied[0]], argmax_tie));
    }
    let best = tied.iter().map(|&i| mass[i]).fold(f64::NEG_INFINITY, f64::max);
    let winner = tied
        .iter()
        .copied()
        .filter(|&i| mass[i] == best)
        .max()
        .expect("non-empty tie set");
    Ok((DiagnosisDegree::ALL[winner], true))
}

fn has_tied_max(d: &DegreeDistribution) -> bool {
    let top = d.probs()[d.argmax().index()];
    d.probs().iter().filter(|&&p| p == top).count() > 1
}

/// Acoustic inputs for one human utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairAcoustics {
    /// Audio-classifier sequence; empty when there is no audio.
    pub segments: Vec<Vec<f64>>,
    /// Per-token prosody for the disfluency classifier.
    pub token_prosody: Option<Vec<[f64; PROSODY_DIM]>>,
    /// Set when the utterance carried audio, which makes token prosody
    /// mandatory.
    pub has_audio: bool,
    /// Pauses inside the utterance on the session clock.
    pub pauses: Vec<Pause>,
}

impl PairAcoustics {
    pub fn text_only() -> Self {
        Self::default()
    }

    /// Builds every acoustic input from an analysis of the utterance audio,
    /// with token timings spread uniformly over the recording.
    pub fn from_analysis(
        analysis: &Analysis,
        n_tokens: usize,
        t_start: f64,
        segment_s: f64,
        vad_threshold_db: f64,
        pause_min_s: f64,
    ) -> Self {
        let duration = analysis.frame_count() as f64 * analysis.spec.hop_s;
        Self {
            segments: analysis.segment_vectors(segment_s).into_iter().map(|v| v.values).collect(),
            token_prosody: Some(
                uniform_token_spans(n_tokens, duration)
                    .into_iter()
                    .map(|(a, b)| analysis.prosody_span(a, b))
                    .collect(),
            ),
            has_audio: true,
            pauses: audio_pauses(analysis, t_start, vad_threshold_db, pause_min_s),
        }
    }

    /// A precomputed utterance vector (e.g. from an external toolbox): one
    /// audio step and no frame-level prosody.
    pub fn from_vector(values: Vec<f64>) -> Self {
        Self {
            segments: vec![values],
            ..Self::default()
        }
    }
}

/// The four trained classifiers and the lexical resources they read.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModels {
    pub audio: SequenceClassifier,
    pub language: SequenceClassifier,
    pub embeddings: EmbeddingTable,
    pub disfluency: SequenceClassifier,
    pub vocab: Vocabulary,
    pub interactivity: LinearSoftmaxModel,
}

const MANIFEST_FORMAT: &str = "adscreen-detectors";
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    embedding_dim: usize,
    embedding_seed: u64,
    vocabulary: Vocabulary,
}

impl DetectorModels {
    /// Zero-weight models: every classifier outputs the uniform distribution.
    pub fn zeros(audio_dim: usize, embeddings: EmbeddingTable, vocab: Vocabulary, hidden: usize) -> Self {
        use crate::neural::BiGruClassifier;
        Self {
            audio: SequenceClassifier::new(BiGruClassifier::zeros(audio_dim, hidden, 4)),
            language: SequenceClassifier::new(BiGruClassifier::zeros(embeddings.dim(), hidden, 4)),
            disfluency: SequenceClassifier::new(BiGruClassifier::zeros(vocab.len() + PROSODY_DIM, hidden, 4)),
            embeddings,
            vocab,
            interactivity: LinearSoftmaxModel::default(),
        }
    }

    /// Writes `audio.json`, `language.json`, `disfluency.json`,
    /// `interactivity.json` and `detectors.json` into `dir`. Only hashed
    /// embedding parameters are recorded.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), DetectorError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_model(&self.audio, dir.join("audio.json"))?;
        save_model(&self.language, dir.join("language.json"))?;
        save_model(&self.disfluency, dir.join("disfluency.json"))?;
        self.interactivity.save(dir.join("interactivity.json"))?;
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            embedding_dim: self.embeddings.dim(),
            embedding_seed: self.embeddings.seed(),
            vocabulary: self.vocab.clone(),
        };
        let text = serde_json::to_string(&manifest).map_err(|e| DetectorError::Format(e.to_string()))?;
        fs::write(dir.join("detectors.json"), text)?;
        Ok(())
    }

    /// Loads a directory written by [`DetectorModels::save`]. `embeddings`
    /// replaces the hashed table when a pretrained one is configured.
    pub fn load(dir: impl AsRef<Path>, embeddings: Option<EmbeddingTable>) -> Result<Self, DetectorError> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("detectors.json"))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DetectorError::Format(format!("unreadable manifest: {e}")))?;
        if manifest.format != MANIFEST_FORMAT || manifest.version != MANIFEST_VERSION {
            return Err(DetectorError::Format(format!(
                "expected {MANIFEST_FORMAT} v{MANIFEST_VERSION}, found {} v{}",
                manifest.format, manifest.version
            )));
        }
        let mut vocab = manifest.vocabulary;
        vocab.reindex();
        let embeddings =
            embeddings.unwrap_or_else(|| EmbeddingTable::hashed(manifest.embedding_dim, manifest.embedding_seed));
        let models = Self {
            audio: load_model(dir.join("audio.json"), 4)?,
            language: load_model(dir.join("language.json"), 4)?,
            disfluency: load_model(dir.join("disfluency.json"), 4)?,
            interactivity: LinearSoftmaxModel::load(dir.join("interactivity.json"))?,
            embeddings,
            vocab,
        };
        if models.language.net.input_dim() != models.embeddings.dim() {
            return Err(DetectorError::Format("language model input differs from embedding dim".into()));
        }
        if models.disfluency.net.input_dim() != models.vocab.len() + PROSODY_DIM {
            return Err(DetectorError::Format("disfluency model input differs from vocabulary size".into()));
        }
        Ok(models)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockVerdict {
    pub block_index: usize,
    pub per_classifier: BTreeMap<ClassifierKind, DegreeDistribution>,
    /// Per-utterance distributions of the three utterance-level classifiers.
    pub per_pair: BTreeMap<ClassifierKind, Vec<DegreeDistribution>>,
    /// Argmax of each classifier's distribution, in [`ClassifierKind::ALL`]
    /// order.
    pub votes: [DiagnosisDegree; 4],
    #[serde(rename = "final")]
    pub final_degree: DiagnosisDegree,
    pub tie_broken: bool,
    pub features: InteractionalFeatures,
    pub disfluencies: DisfluencyInventory,
}

impl BlockVerdict {
    /// Votes equal the argmaxes and the final label follows the vote rule.
    pub fn is_consistent(&self) -> bool {
        let results: Vec<(DiagnosisDegree, DegreeDistribution)> = ClassifierKind::ALL
            .iter()
            .zip(self.votes)
            .filter_map(|(k, v)| self.per_classifier.get(k).map(|d| (v, *d)))
            .collect();
        results.len() == 4
            && results.iter().all(|(v, d)| d.argmax() == *v)
            && stage2_vote(&results).ok() == Some((self.final_degree, self.tie_broken))
    }
}

/// Runs the full ensemble on one block. `acoustics` has one entry per pair.
pub fn detect_block(
    block: &DialogueBlock,
    models: &DetectorModels,
    acoustics: &[PairAcoustics],
) -> Result<BlockVerdict, DetectorError> {
    if block.is_empty() {
        return Err(DetectorError::EmptyBlock);
    }
    if acoustics.len() != block.len() {
        return Err(DetectorError::WrongArity {
            expected: block.len(),
            found: acoustics.len(),
        });
    }
    let mut per_pair: BTreeMap<ClassifierKind, Vec<DegreeDistribution>> = BTreeMap::new();
    let mut disfluencies = DisfluencyInventory::default();
    for (pair, ac) in block.pairs().iter().zip(acoustics) {
        let tokens = &pair.human.tokens;
        disfluencies += count_disfluencies(tokens);
        if ac.has_audio && ac.token_prosody.is_none() && !tokens.is_empty() {
            return Err(DetectorError::Alignment(format!(
                "pair {} has audio but no token timings",
                pair.index
            )));
        }
        let audio = if ac.segments.is_empty() {
            DegreeDistribution::uniform()
        } else {
            audio_classify(&models.audio, &ac.segments)?
        };
        let (language, disfluency) = if tokens.is_empty() {
            (DegreeDistribution::uniform(), DegreeDistribution::uniform())
        } else {
            let fused = disfluency_features(&models.vocab, tokens, ac.token_prosody.as_deref())?;
            (
                language_classify(&models.language, &embed_sequence(&models.embeddings, tokens))?,
                disfluency_classify(&models.disfluency, &fused)?,
            )
        };
        per_pair.entry(ClassifierKind::Audio).or_default().push(audio);
        per_pair.entry(ClassifierKind::Language).or_default().push(language);
        per_pair.entry(ClassifierKind::Disfluency).or_default().push(disfluency);
    }

    let pauses: Vec<Pause> = if acoustics.iter().any(|a| a.has_audio) {
        acoustics.iter().flat_map(|a| a.pauses.iter().copied()).collect()
    } else {
        text_mode_pauses(block, TEXT_PAUSE_MAX_S)
    };
    let features = compute_interactional_features(block, &pauses)?;

    let mut per_classifier = BTreeMap::new();
    for (kind, ds) in &per_pair {
        let avg = if ds.len() == PAIRS_PER_BLOCK {
            stage1_average(ds)?
        } else {
            average(ds)?
        };
        per_classifier.insert(*kind, avg);
    }
    per_classifier.insert(
        ClassifierKind::Interactivity,
        interactivity_classify(&models.interactivity, &features),
    );
    let votes = ClassifierKind::ALL.map(|k| per_classifier[&k].argmax());
    let results: Vec<_> = ClassifierKind::ALL
        .iter()
        .zip(votes)
        .map(|(k, v)| (v, per_classifier[k]))
        .collect();
    let (final_degree, tie_broken) = stage2_vote(&results)?;
    Ok(BlockVerdict {
        block_index: block.block_index(),
        per_classifier,
        per_pair,
        votes,
        final_degree,
        tie_broken,
        features,
        disfluencies,
    })
}
