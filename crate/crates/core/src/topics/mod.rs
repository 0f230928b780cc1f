//! LDA topic modeling over per-user documents.
//!
//! Each user's messages are concatenated into one document before training;
//! messages then inherit their author's dominant topic. Topic labels are
//! 1-indexed everywhere outside the sampler.

mod gibbs;
mod perplexity;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{normalize_text, Corpus, Message};

pub use gibbs::{
    gibbs_train, gibbs_train_observed, GibbsSampler, LdaConfig, DEFAULT_BETA, DEFAULT_ITERS,
};
pub use perplexity::{
    choose_k, perplexity, split_heldout, HeldoutSplit, KSelection, PerplexityConfig,
    PerplexityReport, DEFAULT_FOLD_IN_ITERS, DEFAULT_HELDOUT_FRAC,
};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_MIN_DF: usize = 2;
/// A text shared by at least this many other users is treated as a headline.
pub const DEFAULT_NEWS_DUPLICATE_USERS: usize = 20;
pub const TOP_WORDS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopicError {
    #[error("no documents left after preprocessing")]
    EmptyAfterPreprocess,
    #[error("no scorable held-out tokens ({oov} out of vocabulary)")]
    NoTokens { oov: usize },
    #[error("invalid LDA configuration: {0}")]
    InvalidConfig(String),
    #[error("token index {0} outside vocabulary")]
    UnknownToken(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Token strings with their document frequencies, indexed in sorted order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let doc_freq = vec![0; words.len()];
        Self {
            words,
            index,
            doc_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn doc_freq(&self, i: usize) -> usize {
        self.doc_freq[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub user_id: String,
    pub tokens: Vec<usize>,
}

impl Document {
    pub fn new(user_id: impl Into<String>, tokens: Vec<usize>) -> Self {
        Self {
            user_id: user_id.into(),
            tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentSet {
    pub docs: Vec<Document>,
    pub vocabulary: Vocabulary,
}

impl DocumentSet {
    /// Checks token indices and recomputes document frequencies.
    pub fn new(docs: Vec<Document>, mut vocabulary: Vocabulary) -> Result<Self, TopicError> {
        let v = vocabulary.len();
        let mut df = vec![0; v];
        for doc in &docs {
            let mut seen = HashSet::new();
            for &w in &doc.tokens {
                if w >= v {
                    return Err(TopicError::UnknownToken(w));
                }
                if seen.insert(w) {
                    df[w] += 1;
                }
            }
        }
        vocabulary.doc_freq = df;
        Ok(Self { docs, vocabulary })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).sum()
    }

    pub fn doc_index(&self) -> HashMap<&str, usize> {
        self.docs
            .iter()
            .enumerate()
            .map(|(i, d)| (d.user_id.as_str(), i))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    pub language: String,
    pub stopwords: HashSet<String>,
    pub min_df: usize,
    /// Drop texts repeated by at least this many other users; `None` keeps them.
    pub news_duplicate_users: Option<usize>,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            language: "en".into(),
            stopwords: HashSet::new(),
            min_df: DEFAULT_MIN_DF,
            news_duplicate_users: Some(DEFAULT_NEWS_DUPLICATE_USERS),
        }
    }
}

impl PreprocessOptions {
    pub fn with_stopwords<'a>(mut self, words: impl IntoIterator<Item = &'a str>) -> Self {
        self.stopwords = words.into_iter().map(|w| w.to_lowercase()).collect();
        self
    }
}

/// Lowercased content tokens: URLs and @-mentions removed, hashtags kept
/// without `#`, tokens shorter than two characters and stopwords dropped.
pub fn tokenize(text: &str, stopwords: &HashSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        if lower.starts_with("http://")
            || lower.starts_with("https://")
            || lower.starts_with("www.")
        {
            continue;
        }
        if lower.starts_with('@') {
            continue;
        }
        for piece in lower.split(|c: char| !c.is_alphanumeric()) {
            if piece.chars().count() >= 2 && !stopwords.contains(piece) {
                out.push(piece.to_string());
            }
        }
    }
    out
}

/// Messages of the target language whose normalized text is shared by at
/// least `threshold` other users.
fn news_like_ids<'a>(messages: &[&'a Message], threshold: usize) -> HashSet<&'a str> {
    let mut users_by_text: HashMap<String, HashSet<&str>> = HashMap::new();
    for m in messages {
        users_by_text
            .entry(normalize_text(&m.text))
            .or_default()
            .insert(m.user_id.as_str());
    }
    messages
        .iter()
        .filter(|m| users_by_text[&normalize_text(&m.text)].len() > threshold)
        .map(|m| m.id.as_str())
        .collect()
}

/// Builds one document per user from the corpus.
pub fn preprocess(corpus: &Corpus, options: &PreprocessOptions) -> Result<DocumentSet, TopicError> {
    let lang = options.language.to_lowercase();
    let messages: Vec<&Message> = corpus
        .messages()
        .iter()
        .filter(|m| m.language == lang)
        .collect();
    let news = options
        .news_duplicate_users
        .map(|t| news_like_ids(&messages, t))
        .unwrap_or_default();

    let mut per_user: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for m in messages.iter().filter(|m| !news.contains(m.id.as_str())) {
        per_user
            .entry(m.user_id.as_str())
            .or_default()
            .extend(tokenize(&m.text, &options.stopwords));
    }

    let mut df: HashMap<&str, usize> = HashMap::new();
    for tokens in per_user.values() {
        let unique: HashSet<&str> = tokens.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let mut words: Vec<String> = df
        .iter()
        .filter(|&(_, &n)| n >= options.min_df)
        .map(|(w, _)| w.to_string())
        .collect();
    words.sort_unstable();
    let vocabulary = Vocabulary::from_words(words);

    let docs: Vec<Document> = per_user
        .iter()
        .map(|(user, tokens)| {
            Document::new(
                *user,
                tokens.iter().filter_map(|t| vocabulary.get(t)).collect(),
            )
        })
        .filter(|d| !d.tokens.is_empty())
        .collect();
    if docs.is_empty() {
        return Err(TopicError::EmptyAfterPreprocess);
    }
    DocumentSet::new(docs, vocabulary)
}

/// A trained (or hand-built) LDA model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicModel {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iters: usize,
    pub seed: u64,
    pub vocabulary: Vec<String>,
    /// User id of each theta row.
    pub doc_users: Vec<String>,
    /// K x V topic-word distributions.
    pub phi: Vec<Vec<f64>>,
    /// D x K document-topic distributions.
    pub theta: Vec<Vec<f64>>,
    /// Per-document, per-token topic (0-indexed).
    #[serde(default)]
    pub assignments: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(flatten)]
    model: TopicModel,
}

impl TopicModel {
    /// A model from explicit distributions, e.g. for evaluation.
    pub fn from_parts(
        vocabulary: Vec<String>,
        phi: Vec<Vec<f64>>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self, TopicError> {
        let model = Self {
            k: phi.len(),
            alpha,
            beta,
            iters: 0,
            seed: 0,
            vocabulary,
            doc_users: Vec::new(),
            phi,
            theta: Vec::new(),
            assignments: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), TopicError> {
        let bad = |msg: String| Err(TopicError::InvalidModel(msg));
        if self.k == 0 || self.phi.len() != self.k {
            return bad(format!(
                "phi has {} rows for K = {}",
                self.phi.len(),
                self.k
            ));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return bad("alpha must be positive".into());
        }
        let v = self.vocabulary.len();
        for (i, row) in self.phi.iter().chain(&self.theta).enumerate() {
            let width = if i < self.k { v } else { self.k };
            if row.len() != width || row.iter().any(|p| p.is_nan() || *p < 0.0) {
                return bad(format!("row {i} has wrong width or negative entries"));
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("row {i} does not sum to 1"));
            }
        }
        if self.theta.len() != self.doc_users.len() {
            return bad("theta rows and document users differ in length".into());
        }
        Ok(())
    }

    pub fn word_index(&self) -> HashMap<&str, usize> {
        self.vocabulary
            .iter()
            .enumerate()
            .map(|(i, w)| (w.as_str(), i))
            .collect()
    }

    /// 1-indexed argmax of a theta row; lower topic wins ties.
    pub fn dominant_topic(row: &[f64]) -> usize {
        let mut best = 0;
        for (t, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = t;
            }
        }
        best + 1
    }

    /// The `n` highest-probability words of topic `t` (0-indexed).
    pub fn top_words(&self, t: usize, n: usize) -> Vec<&str> {
        let mut idx: Vec<usize> = (0..self.vocabulary.len()).collect();
        idx.sort_by(|&a, &b| self.phi[t][b].total_cmp(&self.phi[t][a]).then(a.cmp(&b)));
        idx.into_iter()
            .take(n)
            .map(|i| self.vocabulary[i].as_str())
            .collect()
    }

    pub fn write_json<W: Write>(&self, out: W) -> std::io::Result<()> {
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        serde_json::to_writer(out, &file).map_err(std::io::Error::from)
    }

    pub fn read_json(text: &str) -> Result<Self, TopicError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| TopicError::InvalidModel(e.to_string()))?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(TopicError::InvalidModel(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        file.model.validate()?;
        Ok(file.model)
    }
}

#[derive(Debug, Clone)]
pub struct TopicAssignment {
    pub corpus: Corpus,
    /// Messages whose authors have no document; they stay unlabeled.
    pub unknown_users: usize,
}

/// Labels every message with its author's dominant topic.
pub fn assign_topics(model: &TopicModel, corpus: &Corpus) -> TopicAssignment {
    let dominant: HashMap<&str, usize> = model
        .doc_users
        .iter()
        .zip(&model.theta)
        .map(|(u, row)| (u.as_str(), TopicModel::dominant_topic(row)))
        .collect();
    let mut unknown = 0;
    let messages = corpus
        .messages()
        .iter()
        .map(|m| {
            let mut m = m.clone();
            m.topic = dominant.get(m.user_id.as_str()).copied();
            if m.topic.is_none() {
                unknown += 1;
            }
            m
        })
        .collect();
    TopicAssignment {
        corpus: corpus.derive("assign_topics", messages),
        unknown_users: unknown,
    }
}

/// Labels each message by folding in its own tokens against the fixed
/// topics. Messages with no in-vocabulary tokens stay unlabeled.
pub fn assign_topics_per_message(
    model: &TopicModel,
    corpus: &Corpus,
    stopwords: &HashSet<String>,
    fold_in_iters: usize,
    seed: u64,
) -> TopicAssignment {
    let index = model.word_index();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unlabeled = 0;
    let messages = corpus
        .messages()
        .iter()
        .map(|m| {
            let mut m = m.clone();
            let tokens: Vec<usize> = tokenize(&m.text, stopwords)
                .iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect();
            m.topic = if tokens.is_empty() {
                unlabeled += 1;
                None
            } else {
                let theta = perplexity::fold_in(model, &tokens, fold_in_iters, &mut rng);
                Some(TopicModel::dominant_topic(&theta))
            };
            m
        })
        .collect();
    TopicAssignment {
        corpus: corpus.derive("assign_topics_per_message", messages),
        unknown_users: unlabeled,
    }
}

/// Majority topic per region among labeled messages; lower topic wins ties.
pub fn dominant_topic_by_region(corpus: &Corpus) -> BTreeMap<String, usize> {
    let mut tallies: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    for m in corpus.messages() {
        if let (Some(region), Some(topic)) = (m.region.as_deref(), m.topic) {
            *tallies.entry(region).or_default().entry(topic).or_insert(0) += 1;
        }
    }
    tallies
        .into_iter()
        .filter_map(|(region, counts)| {
            // BTreeMap iterates topics ascending, so the first max is the lowest
            let mut best: Option<(usize, usize)> = None;
            for (topic, n) in counts {
                if best.is_none_or(|(_, bn)| n > bn) {
                    best = Some((topic, n));
                }
            }
            best.map(|(t, _)| (region.to_string(), t))
        })
        .collect()
}

/// Messages per topic label (1-indexed), including topics with no messages.
pub fn topic_counts(model: &TopicModel, corpus: &Corpus) -> Vec<usize> {
    let mut counts = vec![0; model.k];
    for m in corpus.messages() {
        if let Some(t) = m.topic {
            counts[t - 1] += 1;
        }
    }
    counts
}

/// `topic,tweet_count,top_words` with top words space-separated.
pub fn write_topic_report<W: Write>(
    out: W,
    model: &TopicModel,
    counts: &[usize],
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["topic", "tweet_count", "top_words"])?;
    for t in 0..model.k {
        w.write_record([
            (t + 1).to_string(),
            counts.get(t).copied().unwrap_or(0).to_string(),
            model.top_words(t, TOP_WORDS).join(" "),
        ])?;
    }
    w.flush()
}
