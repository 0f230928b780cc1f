//! Event timelines: fixed-width windows, peak detection and per-window
//! locality metrics.

mod lowess;

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::Message;
use crate::metrics::{locality_report_with, LocalityReport, MetricsError, SpreadMode};

pub use lowess::{lowess, DEFAULT_FRAC, DEFAULT_ROBUST_ITERS};

pub const DEFAULT_WINDOW_SECS: i64 = 1800;
/// Two days.
pub const DEFAULT_HORIZON_SECS: i64 = 2 * 24 * 3600;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemporalError {
    #[error("window width must be positive, got {0}")]
    InvalidWidth(i64),
    #[error("series has no messages")]
    EmptySeries,
    #[error("peak index {peak} outside {len} windows")]
    PeakOutOfRange { peak: usize, len: usize },
    #[error("x has {x} values but y has {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("need at least two points to smooth, got {0}")]
    TooFewPoints(usize),
    #[error("x must be finite and strictly ascending")]
    UnsortedX,
    #[error("smoothing fraction must be in (0, 1], got {0}")]
    InvalidFrac(f64),
    #[error("window {window}: {source}")]
    Metrics { window: usize, source: MetricsError },
}

/// Half-open windows `[origin + k*width, origin + (k+1)*width)` for `k < count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub origin: i64,
    pub width: i64,
    pub count: usize,
}

impl WindowSpec {
    pub fn new(origin: i64, width: i64, count: usize) -> Result<Self, TemporalError> {
        if width <= 0 {
            return Err(TemporalError::InvalidWidth(width));
        }
        Ok(Self {
            origin,
            width,
            count,
        })
    }

    /// Enough windows to cover `horizon` seconds from `origin`.
    pub fn covering(origin: i64, width: i64, horizon: i64) -> Result<Self, TemporalError> {
        if width <= 0 {
            return Err(TemporalError::InvalidWidth(width));
        }
        let count = (horizon.max(0) + width - 1) / width;
        Self::new(origin, width, count as usize)
    }

    pub fn window_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.origin {
            return None;
        }
        let k = ((timestamp - self.origin) / self.width) as usize;
        (k < self.count).then_some(k)
    }

    pub fn window_start(&self, k: usize) -> i64 {
        self.origin + k as i64 * self.width
    }

    /// End of window `k` (exclusive).
    pub fn window_end(&self, k: usize) -> i64 {
        self.window_start(k) + self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSeries {
    pub spec: WindowSpec,
    /// Message ids per window, in input order.
    pub buckets: Vec<Vec<String>>,
    pub counts: Vec<usize>,
    pub out_of_range: usize,
    /// Window treated as time zero, once aligned.
    pub peak: Option<usize>,
}

impl WindowSeries {
    pub fn in_range(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Minutes from the aligned peak for window `k`; `None` before alignment.
    pub fn minutes_from_peak(&self, k: usize) -> Option<f64> {
        self.peak
            .map(|p| (k as f64 - p as f64) * self.spec.width as f64 / 60.0)
    }
}

pub fn bucket<'a>(
    messages: impl IntoIterator<Item = &'a Message>,
    spec: WindowSpec,
) -> WindowSeries {
    let mut buckets = vec![Vec::new(); spec.count];
    let mut out_of_range = 0;
    for m in messages {
        match spec.window_of(m.timestamp) {
            Some(k) => buckets[k].push(m.id.clone()),
            None => out_of_range += 1,
        }
    }
    let counts = buckets.iter().map(Vec::len).collect();
    WindowSeries {
        spec,
        buckets,
        counts,
        out_of_range,
        peak: None,
    }
}

/// Index of the busiest window, earliest on ties.
pub fn find_peak(series: &WindowSeries) -> Result<usize, TemporalError> {
    argmax_first(&series.counts)
        .filter(|&k| series.counts[k] > 0)
        .ok_or(TemporalError::EmptySeries)
}

fn argmax_first(values: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn align_to_peak(series: &WindowSeries, peak: usize) -> Result<WindowSeries, TemporalError> {
    if peak >= series.spec.count {
        return Err(TemporalError::PeakOutOfRange {
            peak,
            len: series.spec.count,
        });
    }
    let mut out = series.clone();
    out.peak = Some(peak);
    Ok(out)
}

/// Locality report for every non-empty window; empty windows stay `None`.
pub fn metric_series(
    series: &WindowSeries,
    messages: &[Message],
    mode: SpreadMode,
) -> Result<Vec<Option<LocalityReport>>, TemporalError> {
    let by_id: HashMap<&str, &Message> = messages.iter().map(|m| (m.id.as_str(), m)).collect();
    series
        .buckets
        .iter()
        .enumerate()
        .map(|(window, ids)| {
            if ids.is_empty() {
                return Ok(None);
            }
            let members: Vec<&Message> = ids
                .iter()
                .filter_map(|id| by_id.get(id.as_str()).copied())
                .collect();
            locality_report_with(&members, mode)
                .map(Some)
                .map_err(|source| TemporalError::Metrics { window, source })
        })
        .collect()
}

/// Smooths a sparse per-window series over its observed entries only.
/// Entries that are `None` stay `None`; with fewer than two observations the
/// raw values are returned.
pub fn smooth_sparse(
    values: &[Option<f64>],
    frac: f64,
    robust_iters: usize,
) -> Result<Vec<Option<f64>>, TemporalError> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i as f64, v)))
        .unzip();
    if xs.len() < 2 {
        return Ok(values.to_vec());
    }
    let fit = lowess(&xs, &ys, frac, robust_iters)?;
    let mut fit = fit.into_iter();
    Ok(values.iter().map(|v| v.and_then(|_| fit.next())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesy::GeoPoint;

    fn at(id: &str, t: i64) -> Message {
        Message::new(id, "u", t, None, "en", "x")
    }

    fn series(counts: &[usize]) -> WindowSeries {
        WindowSeries {
            spec: WindowSpec::new(0, 1800, counts.len()).unwrap(),
            buckets: counts.iter().map(|&c| vec![String::new(); c]).collect(),
            counts: counts.to_vec(),
            out_of_range: 0,
            peak: None,
        }
    }

    #[test]
    fn bucket_boundaries() {
        let spec = WindowSpec::new(1000, 1800, 4).unwrap();
        let msgs = [
            at("a", 1000),
            at("b", 1000 + 1799),
            at("c", 1000 + 1800),
            at("d", 999),
            at("e", 1000 + 4 * 1800),
        ];
        let s = bucket(&msgs, spec);
        assert_eq!(s.buckets[0], ["a", "b"]);
        assert_eq!(s.buckets[1], ["c"]);
        assert_eq!(s.counts, [2, 1, 0, 0]);
        assert_eq!(s.out_of_range, 2);
        assert_eq!(s.in_range() + s.out_of_range, msgs.len());
    }

    #[test]
    fn spec_validation() {
        assert!(WindowSpec::new(0, 0, 3).is_err());
        assert_eq!(WindowSpec::covering(0, 1800, 172_800).unwrap().count, 96);
        assert_eq!(WindowSpec::covering(0, 1800, 1801).unwrap().count, 2);
    }

    #[test]
    fn peaks() {
        assert_eq!(find_peak(&series(&[1, 5, 2])).unwrap(), 1);
        assert_eq!(find_peak(&series(&[1, 5, 5, 2])).unwrap(), 1);
        assert_eq!(find_peak(&series(&[3])).unwrap(), 0);
        assert_eq!(find_peak(&series(&[0, 0])), Err(TemporalError::EmptySeries));
        assert_eq!(find_peak(&series(&[])), Err(TemporalError::EmptySeries));
        assert_eq!(find_peak(&series(&[1, 5, 2, 0, 0, 0])).unwrap(), 1);
    }

    #[test]
    fn alignment_labels() {
        let s = align_to_peak(&series(&[1, 2, 9, 3]), 2).unwrap();
        assert_eq!(s.minutes_from_peak(2), Some(0.0));
        assert_eq!(s.minutes_from_peak(3), Some(30.0));
        assert_eq!(s.minutes_from_peak(0), Some(-60.0));
        let again = align_to_peak(&s, 2).unwrap();
        assert_eq!(again, s);
        assert!(align_to_peak(&s, 4).is_err());
        assert_eq!(series(&[1]).minutes_from_peak(0), None);
    }

    #[test]
    fn metrics_per_window() {
        let p = |lat, lon| Some(GeoPoint::new(lat, lon).unwrap());
        let mk = |id: &str, t, region: &str, pt| {
            let mut m = at(id, t);
            m.point = pt;
            m.region = Some(region.into());
            m
        };
        let msgs = vec![
            mk("a", 10, "A", p(1.0, 1.0)),
            mk("b", 20, "A", p(1.0, 1.0)),
            mk("c", 3700, "B", p(0.0, 0.0)),
            mk("d", 3710, "C", p(0.0, 90.0)),
        ];
        let s = bucket(&msgs, WindowSpec::new(0, 1800, 3).unwrap());
        let reports = metric_series(&s, &msgs, SpreadMode::PerMessage).unwrap();
        let w0 = reports[0].unwrap();
        assert_eq!((w0.focus, w0.entropy, w0.spread_km), (1.0, 0.0, 0.0));
        assert!(reports[1].is_none());
        let w2 = reports[2].unwrap();
        assert_eq!((w2.focus, w2.entropy), (0.5, 1.0));
        assert!((w2.spread_km - 5003.77).abs() < 0.01);
    }

    #[test]
    fn sparse_smoothing_skips_gaps() {
        let vals = [Some(1.0), None, Some(1.0), Some(1.0), None];
        let out = smooth_sparse(&vals, 0.9, 3).unwrap();
        assert_eq!(out[1], None);
        assert_eq!(out[4], None);
        assert!(out.iter().flatten().all(|v| (v - 1.0).abs() < 1e-12));
        assert_eq!(
            smooth_sparse(&[Some(2.0), None], 0.3, 3).unwrap(),
            [Some(2.0), None]
        );
    }
}
