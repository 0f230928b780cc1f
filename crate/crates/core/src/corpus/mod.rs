//! Message corpora: ingestion, keyword/dedup/language filters and home-location
//! estimation for posts without native coordinates.

mod home;
mod io;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::GeoPoint;

pub use home::{attach_estimated_locations, estimate_home, UserTrace, DEFAULT_MIN_HOME_POINTS};
pub use io::{load_corpus, load_traces, write_corpus, InputFormat, LoadOutcome, TraceLoad};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{malformed} of {total} records are malformed; wrong input format?")]
    FormatMismatch { malformed: usize, total: usize },
    #[error("invalid keyword list: {0}")]
    InvalidKeywords(String),
    #[error("need at least {need} geotagged points, have {have}")]
    InsufficientEvidence { have: usize, need: usize },
    #[error("min_count must be at least 1")]
    InvalidThreshold,
    #[error("write failed: {0}")]
    Write(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoSource {
    #[default]
    Native,
    Estimated,
}

/// One geotagged (or geotaggable) post.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub id: String,
    pub user_id: String,
    /// UTC epoch seconds.
    pub timestamp: i64,
    pub point: Option<GeoPoint>,
    pub language: String,
    pub text: String,
    pub region: Option<String>,
    pub geo_source: GeoSource,
    /// 1-indexed topic label, once assigned.
    pub topic: Option<usize>,
}

impl Message {
    pub fn new(
        id: impl Into<String>,
        user_id: impl Into<String>,
        timestamp: i64,
        point: Option<GeoPoint>,
        language: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            user_id: user_id.into(),
            timestamp,
            point,
            language: language.into(),
            text: text.into(),
            region: None,
            geo_source: GeoSource::Native,
            topic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterLogEntry {
    pub stage: String,
    pub before: usize,
    pub after: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub filters: Vec<FilterLogEntry>,
}

/// Messages ordered by `(timestamp, id)` with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    messages: Vec<Message>,
    pub provenance: Provenance,
}

impl Corpus {
    /// Sorts the messages and drops repeated ids (first occurrence in input
    /// order wins). Returns the corpus and the number of dropped duplicates.
    pub fn from_messages(messages: Vec<Message>) -> (Self, usize) {
        let mut seen = HashSet::with_capacity(messages.len());
        let before = messages.len();
        let mut messages: Vec<Message> = messages
            .into_iter()
            .filter(|m| seen.insert(m.id.clone()))
            .collect();
        let dropped = before - messages.len();
        messages.sort_by(|a, b| (a.timestamp, &a.id).cmp(&(b.timestamp, &b.id)));
        (
            Self {
                messages,
                provenance: Provenance::default(),
            },
            dropped,
        )
    }

    pub fn messages(&self) -> &[Message] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Keeps messages matching `keep`, logging the stage. Order is preserved.
    pub fn retain_logged(&self, stage: &str, mut keep: impl FnMut(&Message) -> bool) -> Corpus {
        let messages: Vec<Message> = self.messages.iter().filter(|m| keep(m)).cloned().collect();
        self.derive(stage, messages)
    }

    /// New corpus sharing this one's provenance. `messages` must already be
    /// in `(timestamp, id)` order.
    pub(crate) fn derive(&self, stage: &str, messages: Vec<Message>) -> Corpus {
        let mut provenance = self.provenance.clone();
        provenance.filters.push(FilterLogEntry {
            stage: stage.to_string(),
            before: self.messages.len(),
            after: messages.len(),
        });
        Corpus {
            messages,
            provenance,
        }
    }

    /// Message counts per language.
    pub fn language_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for m in &self.messages {
            *counts.entry(m.language.as_str()).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    #[default]
    Substring,
    Token,
}

/// Casefolded keyword lists per language plus a fallback list.
#[derive(Debug, Clone)]
pub struct KeywordSet {
    by_language: HashMap<String, Vec<String>>,
    fallback: Vec<String>,
}

impl KeywordSet {
    /// Key under which the fallback list is stored in keyword files.
    pub const DEFAULT_KEY: &'static str = "default";

    pub fn new(
        by_language: HashMap<String, Vec<String>>,
        fallback: Vec<String>,
    ) -> Result<Self, CorpusError> {
        if by_language.is_empty() && fallback.is_empty() {
            return Err(CorpusError::InvalidKeywords("no keywords given".into()));
        }
        let fold_all = |words: Vec<String>, lang: &str| -> Result<Vec<String>, CorpusError> {
            words
                .into_iter()
                .map(|w| {
                    let w = w.trim();
                    if w.is_empty() {
                        Err(CorpusError::InvalidKeywords(format!(
                            "empty keyword for {lang}"
                        )))
                    } else {
                        Ok(casefold(w))
                    }
                })
                .collect()
        };
        let by_language = by_language
            .into_iter()
            .map(|(lang, words)| {
                let folded = fold_all(words, &lang)?;
                Ok((lang.to_lowercase(), folded))
            })
            .collect::<Result<HashMap<_, _>, CorpusError>>()?;
        let fallback = fold_all(fallback, Self::DEFAULT_KEY)?;
        Ok(Self {
            by_language,
            fallback,
        })
    }

    /// One keyword list used for every language.
    pub fn single(words: &[&str]) -> Result<Self, CorpusError> {
        Self::new(
            HashMap::new(),
            words.iter().map(|w| w.to_string()).collect(),
        )
    }

    /// Parses a JSON object mapping language codes (or `"default"`) to lists.
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let mut map: HashMap<String, Vec<String>> =
            serde_json::from_str(text).map_err(|e| CorpusError::InvalidKeywords(e.to_string()))?;
        let fallback = map.remove(Self::DEFAULT_KEY).unwrap_or_default();
        Self::new(map, fallback)
    }

    fn for_language(&self, lang: &str) -> &[String] {
        self.by_language
            .get(lang)
            .map(Vec::as_slice)
            .unwrap_or(&self.fallback)
    }
}

pub fn casefold(s: &str) -> String {
    caseless::default_case_fold_str(s)
}

fn tokens(folded: &str) -> Vec<&str> {
    folded
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

fn matches_keyword(
    folded_text: &str,
    text_tokens: &[&str],
    keyword: &str,
    mode: MatchMode,
) -> bool {
    match mode {
        MatchMode::Substring => folded_text.contains(keyword),
        MatchMode::Token => {
            let kw = tokens(keyword);
            !kw.is_empty() && text_tokens.windows(kw.len()).any(|w| w == kw.as_slice())
        }
    }
}

/// Keeps messages whose text contains one of the keywords for their language.
pub fn filter_keyword(corpus: &Corpus, keywords: &KeywordSet, mode: MatchMode) -> Corpus {
    corpus.retain_logged("keyword", |m| {
        let list = keywords.for_language(&m.language);
        if list.is_empty() {
            return false;
        }
        let folded = casefold(&m.text);
        let toks = match mode {
            MatchMode::Token => tokens(&folded),
            MatchMode::Substring => Vec::new(),
        };
        list.iter()
            .any(|k| matches_keyword(&folded, &toks, k, mode))
    })
}

/// Casefold and collapse whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    casefold(text)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Drops messages whose normalized text repeats an earlier message in the same
/// language.
pub fn dedup(corpus: &Corpus) -> Corpus {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    corpus.retain_logged("dedup", |m| {
        seen.insert((m.language.clone(), normalize_text(&m.text)))
    })
}

/// Drops every language with fewer than `min_count` messages.
pub fn prune_languages(corpus: &Corpus, min_count: usize) -> Result<Corpus, CorpusError> {
    if min_count == 0 {
        return Err(CorpusError::InvalidThreshold);
    }
    let keep: HashSet<String> = corpus
        .language_counts()
        .into_iter()
        .filter(|&(_, n)| n >= min_count)
        .map(|(lang, _)| lang.to_string())
        .collect();
    Ok(corpus.retain_logged("prune_languages", |m| keep.contains(&m.language)))
}
