use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use super::{Corpus, CorpusError, GeoSource, Message, UserTrace};
use crate::geodesy::GeoPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Ndjson,
    Csv,
}

impl InputFormat {
    /// Guess from the file extension; anything but `.csv` is NDJSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Ndjson,
        }
    }
}

/// On-disk message record shared by the NDJSON and CSV readers and the writer.
#[derive(Debug, Serialize, Deserialize)]
struct Record {
    #[serde(deserialize_with = "string_or_number")]
    id: String,
    #[serde(deserialize_with = "string_or_number")]
    user_id: String,
    timestamp: i64,
    #[serde(default)]
    lat: Option<f64>,
    #[serde(default)]
    lon: Option<f64>,
    lang: String,
    text: String,
    #[serde(default)]
    geo_source: GeoSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    region: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    topic: Option<usize>,
}

fn string_or_number<'de, D: Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(u64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

impl Record {
    fn into_message(self) -> Option<Message> {
        let lang = self.lang.trim().to_lowercase();
        if self.id.is_empty() || self.user_id.is_empty() || self.timestamp <= 0 || lang.is_empty() {
            return None;
        }
        let point = match (self.lat, self.lon) {
            (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon).ok()?),
            (None, None) => None,
            _ => return None,
        };
        if self.geo_source == GeoSource::Estimated && point.is_none() {
            return None;
        }
        Some(Message {
            id: self.id,
            user_id: self.user_id,
            timestamp: self.timestamp,
            point,
            language: lang,
            text: self.text,
            region: self.region.filter(|r| !r.is_empty()),
            geo_source: self.geo_source,
            topic: self.topic,
        })
    }

    fn from_message(m: &Message) -> Self {
        Record {
            id: m.id.clone(),
            user_id: m.user_id.clone(),
            timestamp: m.timestamp,
            lat: m.point.map(|p| p.lat()),
            lon: m.point.map(|p| p.lon()),
            lang: m.language.clone(),
            text: m.text.clone(),
            geo_source: m.geo_source,
            region: m.region.clone(),
            topic: m.topic,
        }
    }
}

/// Result of ingesting one file.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub corpus: Corpus,
    /// Non-blank records seen.
    pub records: usize,
    pub malformed: usize,
    pub duplicate_ids: usize,
}

pub fn load_corpus(path: &Path, format: InputFormat) -> Result<LoadOutcome, CorpusError> {
    let unreadable = |source| CorpusError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(unreadable)?;
    let mut outcome = read_corpus(file, format).map_err(|e| match e {
        ReadError::Io(source) => unreadable(source),
        ReadError::Corpus(e) => e,
    })?;
    outcome
        .corpus
        .provenance
        .sources
        .push(path.display().to_string());
    Ok(outcome)
}

enum ReadError {
    Io(std::io::Error),
    Corpus(CorpusError),
}

fn read_corpus<R: Read>(reader: R, format: InputFormat) -> Result<LoadOutcome, ReadError> {
    let mut messages = Vec::new();
    let mut records = 0;
    let mut malformed = 0;
    let mut accept = |parsed: Option<Record>| {
        records += 1;
        match parsed.and_then(Record::into_message) {
            Some(m) => messages.push(m),
            None => malformed += 1,
        }
    };
    match format {
        InputFormat::Ndjson => {
            for line in BufReader::new(reader).lines() {
                let line = line.map_err(ReadError::Io)?;
                if line.trim().is_empty() {
                    continue;
                }
                accept(serde_json::from_str(&line).ok());
            }
        }
        InputFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
            // header errors surface here; a missing header is an empty file
            let headers = match rdr.headers() {
                Ok(h) => h.clone(),
                Err(e) => return Err(ReadError::Io(std::io::Error::other(e))),
            };
            for row in rdr.records() {
                match row {
                    Ok(row) => accept(
                        row.deserialize::<Record>(Some(&headers))
                            .ok()
                            .or_else(|| csv_nulls(&row, &headers)),
                    ),
                    Err(e) if e.is_io_error() => {
                        return Err(ReadError::Io(std::io::Error::other(e)));
                    }
                    Err(_) => accept(None),
                }
            }
        }
    }
    if records > 0 && malformed * 2 > records {
        return Err(ReadError::Corpus(CorpusError::FormatMismatch {
            malformed,
            total: records,
        }));
    }
    let (mut corpus, duplicate_ids) = Corpus::from_messages(messages);
    corpus.provenance.filters.push(super::FilterLogEntry {
        stage: "load".into(),
        before: records,
        after: corpus.len(),
    });
    Ok(LoadOutcome {
        corpus,
        records,
        malformed,
        duplicate_ids,
    })
}

/// CSV cells can't hold JSON null; empty optional cells are retried as absent.
fn csv_nulls(row: &csv::StringRecord, headers: &csv::StringRecord) -> Option<Record> {
    const OPTIONAL: [&str; 5] = ["lat", "lon", "geo_source", "region", "topic"];
    let mut kept_headers = csv::StringRecord::new();
    let mut kept = csv::StringRecord::new();
    for (h, v) in headers.iter().zip(row.iter()) {
        if OPTIONAL.contains(&h) && v.trim().is_empty() {
            continue;
        }
        kept_headers.push_field(h);
        kept.push_field(v);
    }
    kept.deserialize(Some(&kept_headers)).ok()
}

/// Writes the corpus as NDJSON, one message per line.
pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> Result<(), CorpusError> {
    for m in corpus.messages() {
        serde_json::to_writer(&mut out, &Record::from_message(m)).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct TraceLoad {
    pub traces: HashMap<String, UserTrace>,
    pub malformed: usize,
}

/// Reads `{user_id, points: [[lat, lon], ...]}` lines. A user appearing on
/// several lines has their points merged.
pub fn load_traces(path: &Path) -> Result<TraceLoad, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = TraceLoad::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| CorpusError::UnreadableFile {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<UserTrace>(&line) {
            Ok(t) => match out.traces.get_mut(&t.user_id) {
                Some(existing) => existing.points.extend_from_slice(t.points()),
                None => {
                    out.traces.insert(t.user_id.clone(), t);
                }
            },
            Err(_) => out.malformed += 1,
        }
    }
    Ok(out)
}
