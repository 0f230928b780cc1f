//! Follow graphs and root/child classification of event posters.
//!
//! A poster is a child when at least one account they follow posted about the
//! event strictly before them, and a root otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Message;
use crate::temporal::WindowSpec;

#[derive(Debug, Error)]
pub enum PropagationError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no posting users to classify")]
    EmptyForest,
    #[error("peak index {peak} outside {len} windows")]
    PeakOutOfRange { peak: usize, len: usize },
}

/// Follower -> followees.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FollowGraph {
    edges: BTreeMap<String, BTreeSet<String>>,
}

impl FollowGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `follower -> followee`. Self-edges and empty ids are refused.
    pub fn add_edge(&mut self, follower: &str, followee: &str) -> bool {
        if follower.is_empty() || followee.is_empty() || follower == followee {
            return false;
        }
        self.edges
            .entry(follower.to_string())
            .or_default()
            .insert(followee.to_string())
    }

    pub fn followees(&self, user: &str) -> impl Iterator<Item = &str> {
        self.edges
            .get(user)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    /// `(follower, followee)` pairs in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .flat_map(|(a, bs)| bs.iter().map(move |b| (a.as_str(), b.as_str())))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Whether `user` appears as a follower or a followee.
    pub fn covers(&self, user: &str) -> bool {
        self.edges.contains_key(user) || self.edges.values().any(|f| f.contains(user))
    }

    fn covered_users(&self) -> BTreeSet<&str> {
        self.edges
            .iter()
            .flat_map(|(u, fs)| std::iter::once(u.as_str()).chain(fs.iter().map(String::as_str)))
            .collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct GraphLoad {
    pub graph: FollowGraph,
    pub self_edges: usize,
    pub duplicate_edges: usize,
    pub malformed: usize,
}

/// Reads a two-column `follower_id,followee_id` edge list (comma or tab
/// separated, optional header).
pub fn load_graph(path: &Path) -> Result<GraphLoad, PropagationError> {
    let unreadable = |source| PropagationError::UnreadableFile {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(unreadable)?;
    let mut out = GraphLoad::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(unreadable)?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let sep = if line.contains('\t') { '\t' } else { ',' };
        let mut cols = line.split(sep).map(str::trim);
        let (Some(follower), Some(followee), None) = (cols.next(), cols.next(), cols.next()) else {
            out.malformed += 1;
            continue;
        };
        if i == 0 && follower == "follower_id" {
            continue;
        }
        if follower.is_empty() || followee.is_empty() {
            out.malformed += 1;
        } else if follower == followee {
            out.self_edges += 1;
        } else if !out.graph.add_edge(follower, followee) {
            out.duplicate_edges += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Root,
    Child,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropagationForest {
    /// Earliest in-event post per user.
    pub first_post: BTreeMap<String, i64>,
    pub classification: BTreeMap<String, NodeKind>,
    /// Followees who posted strictly earlier; empty for roots.
    pub parent_candidates: BTreeMap<String, BTreeSet<String>>,
}

impl PropagationForest {
    pub fn len(&self) -> usize {
        self.first_post.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_post.is_empty()
    }

    pub fn children(&self) -> usize {
        self.classification
            .values()
            .filter(|&&k| k == NodeKind::Child)
            .count()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassifyOptions {
    /// Only classify users that appear somewhere in the graph.
    pub graph_users_only: bool,
}

pub fn classify<'a>(
    messages: impl IntoIterator<Item = &'a Message>,
    graph: &FollowGraph,
    options: ClassifyOptions,
) -> PropagationForest {
    let covered = options.graph_users_only.then(|| graph.covered_users());
    let mut first_post: BTreeMap<String, i64> = BTreeMap::new();
    for m in messages {
        if covered
            .as_ref()
            .is_some_and(|c| !c.contains(m.user_id.as_str()))
        {
            continue;
        }
        first_post
            .entry(m.user_id.clone())
            .and_modify(|t| *t = (*t).min(m.timestamp))
            .or_insert(m.timestamp);
    }
    let mut classification = BTreeMap::new();
    let mut parent_candidates = BTreeMap::new();
    for (user, &t) in &first_post {
        let parents: BTreeSet<String> = graph
            .followees(user)
            .filter(|v| first_post.get(*v).is_some_and(|&tv| tv < t))
            .map(str::to_string)
            .collect();
        let kind = if parents.is_empty() {
            NodeKind::Root
        } else {
            NodeKind::Child
        };
        classification.insert(user.clone(), kind);
        parent_candidates.insert(user.clone(), parents);
    }
    PropagationForest {
        first_post,
        classification,
        parent_candidates,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub minutes_from_peak: f64,
    pub cumulative_users: usize,
    pub cumulative_children: usize,
    /// `None` while no user has posted yet.
    pub child_fraction: Option<f64>,
}

/// Cumulative child proportion at the end of each window. Users count from
/// their first post onward, including posts before the first window.
pub fn child_proportion_curve(
    forest: &PropagationForest,
    spec: WindowSpec,
    peak: usize,
) -> Result<Vec<CurvePoint>, PropagationError> {
    if forest.is_empty() {
        return Err(PropagationError::EmptyForest);
    }
    if peak >= spec.count {
        return Err(PropagationError::PeakOutOfRange {
            peak,
            len: spec.count,
        });
    }
    let mut posts: Vec<(i64, bool)> = forest
        .first_post
        .iter()
        .map(|(u, &t)| (t, forest.classification[u] == NodeKind::Child))
        .collect();
    posts.sort_unstable();
    let mut curve = Vec::with_capacity(spec.count);
    let (mut users, mut children, mut next) = (0, 0, 0);
    for k in 0..spec.count {
        let end = spec.window_end(k);
        while next < posts.len() && posts[next].0 < end {
            users += 1;
            children += usize::from(posts[next].1);
            next += 1;
        }
        curve.push(CurvePoint {
            minutes_from_peak: (k as f64 - peak as f64) * spec.width as f64 / 60.0,
            cumulative_users: users,
            cumulative_children: children,
            child_fraction: (users > 0).then(|| children as f64 / users as f64),
        });
    }
    Ok(curve)
}

/// `user_id,first_post,kind,parent_candidates` (candidates space-separated).
pub fn write_classification_csv<W: Write>(
    out: W,
    forest: &PropagationForest,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "first_post", "kind", "parent_candidates"])?;
    for (user, t) in &forest.first_post {
        let kind = match forest.classification[user] {
            NodeKind::Root => "root",
            NodeKind::Child => "child",
        };
        let parents: Vec<&str> = forest.parent_candidates[user]
            .iter()
            .map(String::as_str)
            .collect();
        w.write_record([user.as_str(), &t.to_string(), kind, &parents.join(" ")])?;
    }
    w.flush()
}

/// `minutes_from_peak,cumulative_users,cumulative_children,child_fraction`;
/// the fraction is left empty before anyone has posted.
pub fn write_curve_csv<W: Write>(out: W, curve: &[CurvePoint]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "minutes_from_peak",
        "cumulative_users",
        "cumulative_children",
        "child_fraction",
    ])?;
    for p in curve {
        w.write_record([
            p.minutes_from_peak.to_string(),
            p.cumulative_users.to_string(),
            p.cumulative_children.to_string(),
            p.child_fraction.map(|f| f.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn scenario() -> impl Strategy<Value = (Vec<i64>, Vec<(usize, usize)>, (usize, usize))> {
        (2usize..8).prop_flat_map(|n| {
            (
                proptest::collection::vec(0i64..5, n),
                proptest::collection::vec((0..n, 0..n), 0..20),
                (0..n, 0..n),
            )
        })
    }

    fn build(times: &[i64], edges: &[(usize, usize)]) -> (Vec<Message>, FollowGraph) {
        let msgs = times
            .iter()
            .enumerate()
            .map(|(u, &t)| Message::new(format!("m{u}"), format!("u{u}"), t + 1, None, "en", "x"))
            .collect();
        let mut g = FollowGraph::new();
        for &(a, b) in edges {
            g.add_edge(&format!("u{a}"), &format!("u{b}"));
        }
        (msgs, g)
    }

    proptest! {
        #[test]
        fn adding_an_edge_never_removes_children((times, edges, extra) in scenario()) {
            let (msgs, g) = build(&times, &edges);
            let before = classify(&msgs, &g, ClassifyOptions::default());
            let mut more = edges.clone();
            more.push(extra);
            let (_, g2) = build(&times, &more);
            let after = classify(&msgs, &g2, ClassifyOptions::default());
            for (u, kind) in &before.classification {
                if *kind == NodeKind::Child {
                    prop_assert_eq!(after.classification[u], NodeKind::Child);
                }
            }
        }

        #[test]
        fn message_order_is_irrelevant((times, edges, _) in scenario()) {
            let (msgs, g) = build(&times, &edges);
            let mut reversed = msgs.clone();
            reversed.reverse();
            prop_assert_eq!(
                classify(&msgs, &g, ClassifyOptions::default()),
                classify(&reversed, &g, ClassifyOptions::default())
            );
        }

        #[test]
        fn curve_is_cumulative((times, edges, _) in scenario()) {
            let (msgs, g) = build(&times, &edges);
            let f = classify(&msgs, &g, ClassifyOptions::default());
            let curve = child_proportion_curve(&f, WindowSpec::new(0, 2, 4).unwrap(), 0).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[0].cumulative_users <= w[1].cumulative_users);
                prop_assert!(w[0].cumulative_children <= w[1].cumulative_children);
            }
            prop_assert_eq!(curve.last().unwrap().cumulative_users, times.len());
        }
    }
}
