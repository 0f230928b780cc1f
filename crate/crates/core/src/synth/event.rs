//! Synthetic events whose posting disperses from a center region over time.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedIndex};
use serde_json::json;
use thiserror::Error;

use crate::corpus::{Corpus, Message};
use crate::geodesy::{GeoPoint, Region, EARTH_RADIUS_KM};
use crate::propagation::FollowGraph;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub center: GeoPoint,
    pub n_messages: usize,
    pub n_users: usize,
    pub n_regions: usize,
    /// Per-window growth rate of the chance to post away from the center.
    pub spread_growth: f64,
    /// Probability of each directed follow edge.
    pub follow_density: f64,
    pub seed: u64,
    pub start: i64,
    pub window_secs: i64,
    pub n_windows: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            center: GeoPoint::new(32.7767, -96.797).expect("valid center"),
            n_messages: 2000,
            n_users: 200,
            n_regions: 8,
            spread_growth: 0.03,
            follow_density: 0.02,
            seed: 0,
            start: 1_412_121_600,
            window_secs: 1800,
            n_windows: 96,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: &str| Err(SynthError::InvalidSpec(msg.to_string()));
        if self.n_messages == 0 || self.n_users < 2 || self.n_regions == 0 || self.n_windows == 0 {
            return bad("counts must be positive and n_users at least 2");
        }
        if self.window_secs <= 0 {
            return bad("window width must be positive");
        }
        if !(self.spread_growth >= 0.0 && self.spread_growth.is_finite()) {
            return bad("spread_growth must be a finite rate >= 0");
        }
        if !(0.0..=1.0).contains(&self.follow_density) {
            return bad("follow_density must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Region 0 sits on the center; the rest are spaced on rings of
/// `RING_KM` steps, eight per ring.
const RING_KM: f64 = 400.0;
const PER_RING: usize = 8;
const JITTER_KM: f64 = 15.0;
const TRACE_POINTS: usize = 3;
const UNTAGGED_SHARE: f64 = 0.1;

const WORDS: &[&str] = &[
    "outbreak",
    "hospital",
    "patient",
    "nurse",
    "virus",
    "airport",
    "flight",
    "travel",
    "symptoms",
    "fever",
    "quarantine",
    "health",
    "officials",
    "news",
    "school",
    "case",
    "doctor",
    "vaccine",
    "africa",
    "liberia",
    "dallas",
    "county",
    "care",
    "test",
    "positive",
    "negative",
    "worry",
    "safe",
    "update",
    "report",
    "screening",
    "border",
    "clinic",
    "staff",
    "protective",
    "gear",
    "monitor",
    "contact",
    "risk",
    "response",
];

#[derive(Debug, Clone)]
pub struct SynthEvent {
    pub corpus: Corpus,
    pub regions: Vec<Region>,
    /// `(user_id, recent geotagged points)` for every user.
    pub traces: Vec<(String, Vec<GeoPoint>)>,
    pub graph: FollowGraph,
}

/// Point `distance_km` from `from` along initial `bearing_deg`.
fn destination(from: GeoPoint, bearing_deg: f64, distance_km: f64) -> GeoPoint {
    let d = distance_km / EARTH_RADIUS_KM;
    let (lat1, lon1, b) = (
        from.lat().to_radians(),
        from.lon().to_radians(),
        bearing_deg.to_radians(),
    );
    let lat2 = (lat1.sin() * d.cos() + lat1.cos() * d.sin() * b.cos()).asin();
    let lon2 = lon1 + (b.sin() * d.sin() * lat1.cos()).atan2(d.cos() - lat1.sin() * lat2.sin());
    GeoPoint::new(lat2.to_degrees().clamp(-90.0, 90.0), lon2.to_degrees())
        .expect("destination stays on the sphere")
}

fn jitter(rng: &mut impl Rng, around: GeoPoint) -> GeoPoint {
    destination(
        around,
        rng.gen_range(0.0..360.0),
        rng.gen_range(0.0..JITTER_KM),
    )
}

pub fn synth_regions(spec: &SynthSpec) -> Vec<Region> {
    (0..spec.n_regions)
        .map(|i| {
            let centroid = if i == 0 {
                spec.center
            } else {
                let ring = (i - 1) / PER_RING + 1;
                let slot = (i - 1) % PER_RING;
                let bearing = 360.0 * slot as f64 / PER_RING as f64 + 22.5 * (ring - 1) as f64;
                destination(spec.center, bearing, RING_KM * ring as f64)
            };
            Region::new(format!("R{i:02}"), Some(centroid))
        })
        .collect()
}

pub fn synth_event(spec: &SynthSpec) -> Result<SynthEvent, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let regions = synth_regions(spec);
    let centroid = |r: usize| {
        regions[r]
            .centroid
            .expect("synthetic regions have centroids")
    };

    // Half the users live at the center, the rest spread over outer regions.
    let n_center = if spec.n_regions == 1 {
        spec.n_users
    } else {
        spec.n_users.div_ceil(2)
    };
    let homes: Vec<usize> = (0..spec.n_users)
        .map(|u| {
            if u < n_center {
                0
            } else {
                1 + (u - n_center) % (spec.n_regions - 1)
            }
        })
        .collect();
    let user_id = |u: usize| format!("user{u:04}");
    let (center_users, away_users): (Vec<usize>, Vec<usize>) =
        (0..spec.n_users).partition(|&u| homes[u] == 0);

    // Intensity rises to a peak a quarter of the way in, then decays slowly.
    let peak = spec.n_windows / 4;
    let weights: Vec<f64> = (0..spec.n_windows)
        .map(|w| {
            let d = w as f64 - peak as f64;
            if d < 0.0 {
                (d / (peak.max(1) as f64 / 2.0)).exp()
            } else {
                (-d / (spec.n_windows as f64 / 3.0)).exp()
            }
        })
        .collect();
    let window_dist = WeightedIndex::new(&weights).expect("positive window weights");

    let mut messages = Vec::with_capacity(spec.n_messages);
    for i in 0..spec.n_messages {
        let w = window_dist.sample(&mut rng);
        let p_away = 1.0 - (-spec.spread_growth * w as f64).exp();
        let away = !away_users.is_empty() && rng.gen::<f64>() < p_away;
        let u = *if away { &away_users } else { &center_users }
            .choose(&mut rng)
            .expect("user pools are non-empty");
        let point =
            (rng.gen::<f64>() >= UNTAGGED_SHARE).then(|| jitter(&mut rng, centroid(homes[u])));
        let ts = spec.start + w as i64 * spec.window_secs + rng.gen_range(0..spec.window_secs);
        let n_words = rng.gen_range(6..=10);
        let mut text = String::from("ebola");
        for _ in 0..n_words {
            text.push(' ');
            text.push_str(WORDS.choose(&mut rng).expect("word list non-empty"));
        }
        messages.push(Message::new(
            format!("m{i:06}"),
            user_id(u),
            ts,
            point,
            "en",
            text,
        ));
    }
    let (corpus, _) = Corpus::from_messages(messages);

    let traces = (0..spec.n_users)
        .map(|u| {
            let points = (0..TRACE_POINTS)
                .map(|_| jitter(&mut rng, centroid(homes[u])))
                .collect();
            (user_id(u), points)
        })
        .collect();

    let mut graph = FollowGraph::new();
    for a in 0..spec.n_users {
        for b in 0..spec.n_users {
            if a != b && rng.gen::<f64>() < spec.follow_density {
                graph.add_edge(&user_id(a), &user_id(b));
            }
        }
    }

    Ok(SynthEvent {
        corpus,
        regions,
        traces,
        graph,
    })
}

/// `key,lat,lon`, readable by the region-table loader.
pub fn write_region_table<W: Write>(out: W, regions: &[Region]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["key", "lat", "lon"])?;
    for r in regions {
        if let Some(c) = r.centroid {
            w.write_record([r.key.clone(), c.lat().to_string(), c.lon().to_string()])?;
        }
    }
    w.flush()
}

pub fn write_traces<W: Write>(
    mut out: W,
    traces: &[(String, Vec<GeoPoint>)],
) -> std::io::Result<()> {
    for (user, points) in traces {
        let points: Vec<[f64; 2]> = points.iter().map(|p| [p.lat(), p.lon()]).collect();
        serde_json::to_writer(&mut out, &json!({ "user_id": user, "points": points }))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_edges<W: Write>(out: W, graph: &FollowGraph) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["follower_id", "followee_id"])?;
    for (follower, followee) in graph.edges() {
        w.write_record([follower, followee])?;
    }
    w.flush()
}
