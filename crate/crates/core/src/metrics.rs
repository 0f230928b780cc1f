//! Locality measures over a message set: focus, entropy and spread.
//!
//! Focus and entropy look at how messages are distributed over regions; spread
//! is the mean great-circle distance of message points from their midpoint.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Message;
use crate::geodesy::{haversine, midpoint, GeoError, GeoPoint, KM_PER_MILE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no messages to measure")]
    EmptySet,
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("message {0} has no region")]
    MissingRegion(String),
    #[error("message {0} has no coordinates")]
    MissingPoint(String),
    #[error("thresholds must be strictly ascending")]
    UnsortedThresholds,
}

/// Message counts per region key.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegionCounts {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl RegionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: &str, n: u64) {
        *self.counts.entry(key.to_string()).or_insert(0) += n;
        self.total += n;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }
}

impl<K: AsRef<str>> FromIterator<(K, u64)> for RegionCounts {
    fn from_iter<I: IntoIterator<Item = (K, u64)>>(iter: I) -> Self {
        let mut rc = RegionCounts::new();
        for (k, n) in iter {
            rc.add(k.as_ref(), n);
        }
        rc
    }
}

/// Largest fraction of messages posted in any single region.
pub fn focus(counts: &RegionCounts) -> Result<f64, MetricsError> {
    if counts.total == 0 {
        return Err(MetricsError::EmptySet);
    }
    let max = counts.counts.values().copied().max().unwrap_or(0);
    Ok(max as f64 / counts.total as f64)
}

/// Shannon entropy (bits) of the regional distribution.
pub fn entropy(counts: &RegionCounts) -> Result<f64, MetricsError> {
    if counts.total == 0 {
        return Err(MetricsError::EmptySet);
    }
    let total = counts.total as f64;
    let h: f64 = counts
        .counts
        .values()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let p = n as f64 / total;
            -p * p.log2()
        })
        .sum();
    // a single region yields -0.0
    Ok(h.max(0.0))
}

/// How spread is averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpreadMode {
    /// Mean distance of every message point from the midpoint.
    #[default]
    PerMessage,
    /// Mean over distinct locations: each region's midpoint counts once.
    PerRegion,
}

/// Mean distance (km) of `points` from their geographic midpoint.
pub fn spread(points: &[GeoPoint]) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let center = midpoint(points)?;
    spread_from(points, center)
}

/// Mean distance (km) of `points` from an explicit center.
pub fn spread_from(points: &[GeoPoint], center: GeoPoint) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let sum: f64 = points.iter().map(|&p| haversine(center, p)).sum();
    Ok(sum / points.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalityReport {
    pub focus: f64,
    pub entropy: f64,
    pub spread_km: f64,
    pub midpoint: GeoPoint,
    pub n: usize,
}

pub fn locality_report(messages: &[&Message]) -> Result<LocalityReport, MetricsError> {
    locality_report_with(messages, SpreadMode::PerMessage)
}

pub fn locality_report_with(
    messages: &[&Message],
    mode: SpreadMode,
) -> Result<LocalityReport, MetricsError> {
    if messages.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut counts = RegionCounts::new();
    let mut points = Vec::with_capacity(messages.len());
    let mut by_region: BTreeMap<&str, Vec<GeoPoint>> = BTreeMap::new();
    for m in messages {
        let region = m
            .region
            .as_deref()
            .ok_or_else(|| MetricsError::MissingRegion(m.id.clone()))?;
        let point = m
            .point
            .ok_or_else(|| MetricsError::MissingPoint(m.id.clone()))?;
        counts.add(region, 1);
        points.push(point);
        if mode == SpreadMode::PerRegion {
            by_region.entry(region).or_default().push(point);
        }
    }
    let center = midpoint(&points)?;
    let spread_km = match mode {
        SpreadMode::PerMessage => spread_from(&points, center)?,
        SpreadMode::PerRegion => {
            let locations = by_region
                .values()
                .map(|pts| midpoint(pts))
                .collect::<Result<Vec<_>, _>>()?;
            spread_from(&locations, center)?
        }
    };
    Ok(LocalityReport {
        focus: focus(&counts)?,
        entropy: entropy(&counts)?,
        spread_km,
        midpoint: center,
        n: messages.len(),
    })
}

/// Fraction of messages within each distance threshold (km) of `center`.
pub fn distance_cdf(
    messages: &[&Message],
    center: GeoPoint,
    thresholds_km: &[f64],
) -> Result<Vec<f64>, MetricsError> {
    if messages.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    if thresholds_km.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricsError::UnsortedThresholds);
    }
    let mut distances = messages
        .iter()
        .map(|m| {
            m.point
                .map(|p| haversine(center, p))
                .ok_or_else(|| MetricsError::MissingPoint(m.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    distances.sort_by(f64::total_cmp);
    let n = distances.len() as f64;
    Ok(thresholds_km
        .iter()
        .map(|&t| distances.partition_point(|&d| d <= t) as f64 / n)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Units {
    #[default]
    Km,
    Miles,
}

impl Units {
    pub fn from_km(self, km: f64) -> f64 {
        match self {
            Units::Km => km,
            Units::Miles => km / KM_PER_MILE,
        }
    }

    pub fn to_km(self, value: f64) -> f64 {
        match self {
            Units::Km => value,
            Units::Miles => value * KM_PER_MILE,
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Units::Km => "km",
            Units::Miles => "miles",
        }
    }
}

/// Writes `scope,n,focus,entropy_bits,spread_<unit>,midpoint_lat,midpoint_lon` rows.
pub fn write_report_csv<W: Write>(
    out: W,
    rows: &[(String, LocalityReport)],
    units: Units,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scope",
        "n",
        "focus",
        "entropy_bits",
        &format!("spread_{}", units.suffix()),
        "midpoint_lat",
        "midpoint_lon",
    ])?;
    for (scope, r) in rows {
        w.write_record([
            scope.clone(),
            r.n.to_string(),
            r.focus.to_string(),
            r.entropy.to_string(),
            units.from_km(r.spread_km).to_string(),
            r.midpoint.lat().to_string(),
            r.midpoint.lon().to_string(),
        ])?;
    }
    w.flush()
}
