//! Tokenization, vocabularies, word embeddings, the focus-word tagger and the
//! bigram model used to pick wh-questions.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hesitation tokens kept by the tokenizer and counted as fillers.
pub const FILLERS: [&str; 5] = ["uh", "um", "er", "mm", "hmm"];

#[derive(Debug, Error)]
pub enum TextError {
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding file line {line}: {message}")]
    EmbeddingFormat { line: usize, message: String },
}

pub fn is_filler(token: &str) -> bool {
    FILLERS.contains(&token)
}

/// Lowercases, splits on whitespace and strips surrounding punctuation.
/// Apostrophes inside a word survive, and a single trailing hyphen is kept as
/// the word-fragment marker ("mo-").
pub fn tokenize(raw_text: &str) -> Vec<String> {
    raw_text
        .split_whitespace()
        .filter_map(|chunk| {
            let lower = chunk.to_lowercase();
            let chars: Vec<char> = lower.chars().collect();
            let start = chars.iter().position(|c| c.is_alphanumeric())?;
            let end = chars.iter().rposition(|c| c.is_alphanumeric())? + 1;
            let mut token: String = chars[start..end].iter().collect();
            let fragment = chars.get(end) == Some(&'-') && chars.get(end + 1) != Some(&'-');
            if fragment {
                token.push('-');
            }
            Some(token)
        })
        .collect()
}

/// Frozen token index; index 0 is reserved for out-of-vocabulary tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub const OOV_TOKEN: &str = "<unk>";

impl Vocabulary {
    /// Builds a vocabulary from a token stream, keeping tokens seen at least
    /// `min_count` times, in order of first appearance.
    pub fn build<'a, I>(tokens: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order = Vec::new();
        for t in tokens {
            let c = counts.entry(t).or_insert(0);
            if *c == 0 {
                order.push(t);
            }
            *c += 1;
        }
        let kept = order
            .into_iter()
            .filter(|t| counts[t] >= min_count.max(1))
            .map(str::to_owned);
        Self::from_tokens(kept)
    }

    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut list = vec![OOV_TOKEN.to_string()];
        for t in tokens {
            if t != OOV_TOKEN && !list.contains(&t) {
                list.push(t);
            }
        }
        let mut v = Self {
            tokens: list,
            index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Restores the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }
}

/// One-hot vector per token over `vocab`; unknown tokens light index 0.
pub fn one_hot_sequence(vocab: &Vocabulary, tokens: &[String]) -> Vec<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            let mut v = vec![0.0; vocab.len()];
            v[vocab.index_of(t)] = 1.0;
            v
        })
        .collect()
}

/// Word vectors with deterministic pseudo-random vectors for unknown tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// A table with no stored vectors: every token gets its hashed vector.
    pub fn hashed(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            vectors: HashMap::new(),
        }
    }

    /// Parses "token v1 v2 ... vd" lines; `d` comes from the first line.
    pub fn parse(text: &str, seed: u64) -> Result<Self, TextError> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else {
                continue;
            };
            let values = parts
                .map(|v| v.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TextError::EmbeddingFormat {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let d = *dim.get_or_insert(values.len());
            if d == 0 || values.len() != d {
                return Err(TextError::EmbeddingFormat {
                    line: line_no,
                    message: format!("expected {d} values, found {}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(TextError::EmbeddingFormat {
                    line: line_no,
                    message: "non-finite value".into(),
                });
            }
            vectors.insert(token.to_lowercase(), values);
        }
        let dim = dim.ok_or(TextError::EmbeddingFormat {
            line: 0,
            message: "file has no vectors".into(),
        })?;
        Ok(Self { dim, seed, vectors })
    }

    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self, TextError> {
        Self::parse(&fs::read_to_string(path)?, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn known(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.vectors.get(token) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(self.seed, token));
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

pub fn embed_sequence(table: &EmbeddingTable, tokens: &[String]) -> Vec<Vec<f64>> {
    tokens.iter().map(|t| table.vector(t)).collect()
}

fn fnv1a(seed: u64, token: &str) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Add-one smoothed bigram counts. Bigrams never cross line boundaries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BigramModel {
    unigrams: HashMap<String, u64>,
    bigrams: HashMap<(String, String), u64>,
    total: u64,
}

pub fn train_bigram<I, S>(corpus: I) -> Result<BigramModel, TextError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[String]>,
{
    let mut model = BigramModel::default();
    for line in corpus {
        let line = line.as_ref();
        for t in line {
            *model.unigrams.entry(t.clone()).or_insert(0) += 1;
            model.total += 1;
        }
        for w in line.windows(2) {
            *model
                .bigrams
                .entry((w[0].clone(), w[1].clone()))
                .or_insert(0) += 1;
        }
    }
    if model.total == 0 {
        return Err(TextError::EmptyCorpus);
    }
    Ok(model)
}

impl BigramModel {
    /// Trains on a UTF-8 file holding one utterance per line.
    pub fn from_corpus_file(path: impl AsRef<Path>) -> Result<Self, TextError> {
        let text = fs::read_to_string(path)?;
        train_bigram(text.lines().map(tokenize))
    }

    pub fn vocab_size(&self) -> u64 {
        self.unigrams.len() as u64
    }

    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    pub fn count(&self, token: &str) -> u64 {
        self.unigrams.get(token).copied().unwrap_or(0)
    }

    pub fn pair_count(&self, first: &str, second: &str) -> u64 {
        self.bigrams
            .get(&(first.to_string(), second.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn unigram_probability(&self, token: &str) -> f64 {
        (self.count(token) + 1) as f64 / (self.total + self.vocab_size()) as f64
    }

    pub fn conditional_probability(&self, next: &str, history: &str) -> f64 {
        (self.pair_count(history, next) + 1) as f64
            / (self.count(history) + self.vocab_size()) as f64
    }

    /// P(wh, noun) = P(wh) * P(noun | wh).
    pub fn joint_probability(&self, wh: &str, noun: &str) -> f64 {
        self.unigram_probability(wh) * self.conditional_probability(noun, wh)
    }
}

pub fn joint_probability(model: &BigramModel, wh: &str, noun: &str) -> f64 {
    model.joint_probability(wh, noun)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FocusResult {
    pub focus: Option<String>,
    pub position: Option<usize>,
}

pub trait FocusExtractor {
    fn extract(&self, tokens: &[String], raw_text: &str) -> FocusResult;
}

/// Rule tagger: closed-class stoplist, non-noun suffixes, and capitalization
/// in the raw text marking proper nouns.
#[derive(Debug, Clone, Default)]
pub struct HeuristicTagger;

const CLOSED_CLASS: &[&str] = &[
    // determiners, pronouns, quantifiers
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "every", "each",
    "all", "both", "no", "none", "another", "other", "such", "what", "which", "who",
    "whom", "whose", "when", "where", "why", "how", "i", "me", "my", "mine", "myself",
    "you", "your", "yours", "yourself", "he", "him", "his", "himself", "she", "her",
    "hers", "herself", "it", "its", "itself", "we", "us", "our", "ours", "they", "them",
    "their", "theirs", "one", "ones", "something", "anything", "nothing", "everything",
    "someone", "anyone", "everyone", "somebody", "anybody", "nobody", "everybody",
    "much", "many", "more", "most", "few", "less", "lot", "lots", "bit",
    // prepositions and conjunctions
    "in", "on", "at", "to", "from", "with", "without", "of", "for", "by", "about",
    "into", "onto", "over", "under", "after", "before", "since", "until", "up", "down",
    "out", "off", "through", "around", "and", "or", "but", "so", "if", "because",
    "than", "as", "while", "though", "although", "like",
    // auxiliaries and frequent verbs
    "am", "is", "are", "was", "were", "be", "been", "being", "do", "does", "did",
    "done", "have", "has", "had", "having", "will", "would", "shall", "should", "can",
    "could", "may", "might", "must", "go", "goes", "going", "went", "gone", "get",
    "gets", "got", "make", "made", "take", "took", "see", "saw", "seen", "watch",
    "watched", "know", "knew", "think", "thought", "want", "wanted", "need", "say",
    "said", "tell", "told", "come", "came", "give", "gave", "eat", "ate", "play",
    "played", "live", "lived", "love", "loved", "liked", "enjoy", "enjoyed", "hate",
    "feel", "felt", "remember", "forget", "forgot", "try", "tried", "look", "looked",
    "read", "listen", "listened", "visit", "visited", "buy", "bought", "use", "used",
    "work", "worked", "keep", "kept", "let", "put", "guess", "mean", "meant",
    // adverbs, adjectives, interjections
    "not", "very", "really", "too", "also", "just", "only", "then", "now", "there",
    "here", "yes", "yeah", "yep", "no", "nope", "ok", "okay", "oh", "ah", "well",
    "sure", "maybe", "still", "again", "always", "never", "often", "sometimes",
    "today", "tomorrow", "yesterday", "tonight", "ago", "soon", "later", "already",
    "good", "great", "nice", "fine", "bad", "new", "old", "big", "small", "little",
    "long", "right", "sorry", "please", "thanks", "thank", "hello", "hi", "bye",
    "favorite", "favourite", "same", "last", "next", "first",
];

const NON_NOUN_SUFFIXES: &[&str] = &[
    "ly", "est", "ed", "ful", "ous", "ive", "able", "ible", "less", "ish",
];

impl HeuristicTagger {
    /// True when `token` is tagged noun-like. `capitalized` says whether the
    /// token appeared capitalized in the raw text.
    pub fn is_noun_like(&self, token: &str, capitalized: bool) -> bool {
        if CLOSED_CLASS.contains(&token) || is_filler(token) {
            return false;
        }
        if token.contains('\'') || token.ends_with('-') {
            return false;
        }
        if !token.chars().any(char::is_alphabetic) {
            return false;
        }
        if capitalized {
            return true;
        }
        if token.len() > 4 && token.ends_with("ing") {
            return false;
        }
        !NON_NOUN_SUFFIXES
            .iter()
            .any(|s| token.len() > s.len() + 2 && token.ends_with(s))
    }
}

impl FocusExtractor for HeuristicTagger {
    fn extract(&self, tokens: &[String], raw_text: &str) -> FocusResult {
        let capitals = capitalized_words(raw_text);
        for (i, t) in tokens.iter().enumerate().rev() {
            let capitalized = capitals.get(t.as_str()).copied().unwrap_or(false);
            if self.is_noun_like(t, capitalized) {
                return FocusResult {
                    focus: Some(t.clone()),
                    position: Some(i),
                };
            }
        }
        FocusResult::default()
    }
}

/// Maps each lowercased word of `raw_text` to whether it ever appears
/// capitalized. "I" is excluded as always-capitalized.
fn capitalized_words(raw_text: &str) -> BTreeMap<String, bool> {
    let mut out = BTreeMap::new();
    for chunk in raw_text.split_whitespace() {
        let word: String = chunk
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_string();
        let cap = word.chars().next().is_some_and(char::is_uppercase) && word != "I";
        let e = out.entry(word.to_lowercase()).or_insert(false);
        *e |= cap;
    }
    out
}

pub fn extract_focus(tokens: &[String], raw_text: &str) -> FocusResult {
    HeuristicTagger.extract(tokens, raw_text)
}
