use std::collections::HashMap;

use serde::Deserialize;

use super::{Corpus, CorpusError, GeoSource};
use crate::geodesy::GeoPoint;

/// A user needs at least this many geotagged posts before a home is estimated.
pub const DEFAULT_MIN_HOME_POINTS: usize = 2;

/// Natively geotagged points from one user's recent history.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "RawTrace")]
pub struct UserTrace {
    pub user_id: String,
    pub(super) points: Vec<GeoPoint>,
}

#[derive(Deserialize)]
struct RawTrace {
    user_id: String,
    points: Vec<[f64; 2]>,
}

impl TryFrom<RawTrace> for UserTrace {
    type Error = String;

    fn try_from(raw: RawTrace) -> Result<Self, Self::Error> {
        let points = raw
            .points
            .iter()
            .map(|&[lat, lon]| GeoPoint::new(lat, lon).map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        UserTrace::new(raw.user_id, points).ok_or_else(|| "trace without points".to_string())
    }
}

impl UserTrace {
    /// `None` when `points` is empty.
    pub fn new(user_id: impl Into<String>, points: Vec<GeoPoint>) -> Option<Self> {
        if points.is_empty() {
            return None;
        }
        Some(Self {
            user_id: user_id.into(),
            points,
        })
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Per-axis median of the trace's latitudes and longitudes.
pub fn estimate_home(trace: &UserTrace, min_points: usize) -> Result<GeoPoint, CorpusError> {
    let have = trace.points.len();
    if have < min_points.max(1) {
        return Err(CorpusError::InsufficientEvidence {
            have,
            need: min_points,
        });
    }
    let lat = median(trace.points.iter().map(GeoPoint::lat).collect());
    let lon = median(trace.points.iter().map(GeoPoint::lon).collect());
    Ok(GeoPoint::new(lat, lon).expect("median of valid coordinates is valid"))
}

/// Fills in coordinates for messages without a native geotag from their
/// author's estimated home. Messages whose authors have no qualifying trace
/// are dropped.
pub fn attach_estimated_locations(
    corpus: &Corpus,
    traces: &HashMap<String, UserTrace>,
    min_points: usize,
) -> Corpus {
    let mut homes: HashMap<&str, Option<GeoPoint>> = HashMap::new();
    let messages = corpus
        .messages()
        .iter()
        .filter_map(|m| {
            if m.point.is_some() {
                return Some(m.clone());
            }
            let home = *homes.entry(m.user_id.as_str()).or_insert_with(|| {
                traces
                    .get(&m.user_id)
                    .and_then(|t| estimate_home(t, min_points).ok())
            });
            home.map(|p| {
                let mut m = m.clone();
                m.point = Some(p);
                m.geo_source = GeoSource::Estimated;
                m
            })
        })
        .collect();
    corpus.derive("estimate_home", messages)
}
