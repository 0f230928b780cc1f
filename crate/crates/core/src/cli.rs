//! Command-line front end. Every subcommand reads its settings from flags,
//! falling back to an optional `key = value` config file, then to defaults.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::corpus::{
    attach_estimated_locations, dedup, filter_keyword, load_corpus, load_traces, prune_languages,
    write_corpus, Corpus, CorpusError, InputFormat, KeywordSet, MatchMode, UserTrace,
    DEFAULT_MIN_HOME_POINTS,
};
use crate::geodesy::{assign_region, read_region_table, GeoPoint, Region};
use crate::metrics::{
    distance_cdf, locality_report_with, write_report_csv, MetricsError, SpreadMode, Units,
};
use crate::propagation::{
    child_proportion_curve, classify, load_graph, write_classification_csv, write_curve_csv,
    ClassifyOptions, PropagationError,
};
use crate::synth::{synth_event, write_edges, write_region_table, write_traces, SynthSpec};
use crate::temporal::{
    align_to_peak, bucket, find_peak, metric_series, smooth_sparse, TemporalError, WindowSeries,
    WindowSpec, DEFAULT_FRAC, DEFAULT_HORIZON_SECS, DEFAULT_ROBUST_ITERS, DEFAULT_WINDOW_SECS,
};
use crate::topics::{
    assign_topics, assign_topics_per_message, choose_k, dominant_topic_by_region, gibbs_train,
    preprocess, topic_counts, write_topic_report, LdaConfig, PerplexityConfig, PreprocessOptions,
    TopicError, DEFAULT_BETA, DEFAULT_FOLD_IN_ITERS, DEFAULT_HELDOUT_FRAC, DEFAULT_ITERS,
    DEFAULT_MIN_DF,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub const DEFAULT_KEYWORD: &str = "ebola";
pub const DEFAULT_MIN_LANG_COUNT: usize = 100;
pub const DEFAULT_K: usize = 6;
const DEFAULT_THRESHOLDS: &str = "1,5,10,25,50,100,250,500,1000,2500,5000";

pub const PREPARED_FILE: &str = "prepared.ndjson";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Empty,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub stage: &'static str,
    pub message: String,
}

impl CliError {
    fn new(kind: ErrorKind, stage: &'static str, message: impl Display) -> Self {
        Self {
            kind,
            stage,
            message: message.to_string(),
        }
    }

    fn config(stage: &'static str, message: impl Display) -> Self {
        Self::new(ErrorKind::Config, stage, message)
    }

    fn empty(stage: &'static str, message: impl Display) -> Self {
        Self::new(ErrorKind::Empty, stage, message)
    }

    fn io(stage: &'static str, message: impl Display) -> Self {
        Self::new(ErrorKind::Io, stage, message)
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => EXIT_CONFIG,
            ErrorKind::Empty => EXIT_EMPTY,
            ErrorKind::Io => EXIT_IO,
        }
    }
}

impl Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}

type CliResult<T> = Result<T, CliError>;

fn corpus_error(stage: &'static str, e: CorpusError) -> CliError {
    match e {
        CorpusError::UnreadableFile { .. } | CorpusError::Write(_) => CliError::io(stage, e),
        _ => CliError::config(stage, e),
    }
}

fn metrics_error(stage: &'static str, e: MetricsError) -> CliError {
    match e {
        MetricsError::EmptySet => CliError::empty(stage, e),
        MetricsError::MissingRegion(_) => {
            CliError::config(stage, format!("{e}; supply --region-table"))
        }
        _ => CliError::config(stage, e),
    }
}

fn temporal_error(stage: &'static str, e: TemporalError) -> CliError {
    match e {
        TemporalError::EmptySeries => CliError::empty(stage, e),
        TemporalError::Metrics { source, .. } => metrics_error(stage, source),
        _ => CliError::config(stage, e),
    }
}

fn topic_error(stage: &'static str, e: TopicError) -> CliError {
    match e {
        TopicError::EmptyAfterPreprocess | TopicError::NoTokens { .. } => CliError::empty(stage, e),
        _ => CliError::config(stage, e),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "geolocality",
    version,
    about = "Locality, timeline, topic and propagation analytics for geotagged messages"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// `key = value` settings file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input file(s); repeatable.
    #[arg(long, global = true)]
    pub input: Vec<PathBuf>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub window_secs: Option<i64>,
    /// Epoch seconds of the first window; defaults to the earliest message.
    #[arg(long, global = true)]
    pub event_start: Option<i64>,
    #[arg(long, global = true)]
    pub horizon_secs: Option<i64>,
    /// CSV with `key,lat,lon` region centroids.
    #[arg(long, global = true)]
    pub region_table: Option<PathBuf>,
    /// `km` or `miles`.
    #[arg(long, global = true)]
    pub units: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keyword filter, dedup, language pruning and home-location estimation.
    Prepare(PrepareArgs),
    /// Focus, entropy and spread of the event plus a distance CDF.
    Metrics(MetricsArgs),
    /// Per-window metrics aligned to the peak window.
    Timeline(TimelineArgs),
    /// LDA topics over per-user documents.
    Topics(TopicsArgs),
    /// Root/child classification over a follow graph.
    Propagation(PropagationArgs),
    /// Generate a synthetic event with traces, regions and a follow graph.
    Synth(SynthArgs),
    /// Message counts per language and per region.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
pub struct PrepareArgs {
    /// JSON object of language -> keyword list (`"default"` for the fallback).
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// `substring` or `token`.
    #[arg(long)]
    pub match_mode: Option<String>,
    #[arg(long)]
    pub min_lang_count: Option<usize>,
    /// NDJSON user traces for home-location estimation.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub min_home_points: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct MetricsArgs {
    /// Ascending comma-separated distance thresholds, in the output units.
    #[arg(long)]
    pub thresholds: Option<String>,
    /// `per-message` or `per-region`.
    #[arg(long)]
    pub spread_mode: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct TimelineArgs {
    /// Add LOWESS-smoothed columns.
    #[arg(long)]
    pub lowess: bool,
    #[arg(long)]
    pub frac: Option<f64>,
    #[arg(long)]
    pub robust_iters: Option<usize>,
    #[arg(long)]
    pub spread_mode: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct TopicsArgs {
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated K values to choose from by held-out perplexity.
    #[arg(long)]
    pub candidates: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long)]
    pub min_df: Option<usize>,
    /// Newline-separated stopword file.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Label each message from its own tokens instead of its author's document.
    #[arg(long)]
    pub per_message: bool,
}

#[derive(Debug, Args, Default)]
pub struct PropagationArgs {
    /// Edge list with `follower_id,followee_id` rows.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Only classify users present in the graph.
    #[arg(long)]
    pub graph_users_only: bool,
}

#[derive(Debug, Args, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_messages: Option<usize>,
    #[arg(long)]
    pub n_users: Option<usize>,
    #[arg(long)]
    pub n_regions: Option<usize>,
    #[arg(long)]
    pub spread_growth: Option<f64>,
    #[arg(long)]
    pub follow_density: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub center_lat: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub center_lon: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ReportArgs {}

const KNOWN_KEYS: &[&str] = &[
    "input",
    "output-dir",
    "seed",
    "window-secs",
    "event-start",
    "horizon-secs",
    "region-table",
    "units",
    "keywords",
    "match-mode",
    "min-lang-count",
    "traces",
    "min-home-points",
    "thresholds",
    "spread-mode",
    "lowess",
    "frac",
    "robust-iters",
    "k",
    "candidates",
    "alpha",
    "beta",
    "iters",
    "language",
    "min-df",
    "stopwords",
    "per-message",
    "graph",
    "graph-users-only",
    "n-messages",
    "n-users",
    "n-regions",
    "spread-growth",
    "follow-density",
    "center-lat",
    "center-lon",
];

/// Values from the config file, keyed by flag name.
#[derive(Debug, Default)]
struct FileSettings {
    values: BTreeMap<String, String>,
}

impl FileSettings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('[') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config("config", format!("line {}: expected key = value", n + 1))
            })?;
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::config(
                    "config",
                    format!("line {}: unknown key {key:?}", n + 1),
                ));
            }
            let value = value.trim().trim_matches('"').to_string();
            values.insert(key, value);
        }
        Ok(Self { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::config("config", format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    /// Flag if given, else the file value, else `default`.
    fn pick<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    fn pick_opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn pick_flag(&self, key: &str, flag: bool) -> CliResult<bool> {
        Ok(flag || self.get::<bool>(key)?.unwrap_or(false))
    }
}

/// Settings shared by every subcommand, after merging flags and file.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub window_secs: i64,
    pub event_start: Option<i64>,
    pub horizon_secs: i64,
    pub region_table: Option<PathBuf>,
    pub units: Units,
}

fn parse_units(s: &str) -> CliResult<Units> {
    match s.to_ascii_lowercase().as_str() {
        "km" => Ok(Units::Km),
        "miles" | "mi" => Ok(Units::Miles),
        other => Err(CliError::config(
            "config",
            format!("unknown units {other:?}; expected km or miles"),
        )),
    }
}

fn parse_spread_mode(s: &str) -> CliResult<SpreadMode> {
    match s {
        "per-message" => Ok(SpreadMode::PerMessage),
        "per-region" => Ok(SpreadMode::PerRegion),
        other => Err(CliError::config(
            "config",
            format!("unknown spread mode {other:?}"),
        )),
    }
}

fn parse_list<T: FromStr>(key: &str, s: &str) -> CliResult<Vec<T>>
where
    T::Err: Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse()
                .map_err(|e| CliError::config("config", format!("{key}: {p:?}: {e}")))
        })
        .collect()
}

fn require_file(stage: &'static str, path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(
            stage,
            format!("{} does not exist", path.display()),
        ))
    }
}

impl PipelineConfig {
    fn resolve(global: &GlobalArgs, file: &FileSettings) -> CliResult<Self> {
        let inputs = if !global.input.is_empty() {
            global.input.clone()
        } else {
            file.get::<String>("input")?
                .map(|s| parse_list::<PathBuf>("input", &s))
                .transpose()?
                .unwrap_or_default()
        };
        let config = Self {
            inputs,
            output_dir: file.pick("output-dir", global.output_dir.clone(), PathBuf::from("."))?,
            seed: file.pick("seed", global.seed, 0)?,
            window_secs: file.pick("window-secs", global.window_secs, DEFAULT_WINDOW_SECS)?,
            event_start: file.pick_opt("event-start", global.event_start)?,
            horizon_secs: file.pick("horizon-secs", global.horizon_secs, DEFAULT_HORIZON_SECS)?,
            region_table: file.pick_opt("region-table", global.region_table.clone())?,
            units: parse_units(&file.pick("units", global.units.clone(), "km".to_string())?)?,
        };
        if config.window_secs <= 0 || config.horizon_secs <= 0 {
            return Err(CliError::config(
                "config",
                "window and horizon lengths must be positive",
            ));
        }
        if let Some(t) = &config.region_table {
            require_file("config", t)?;
        }
        Ok(config)
    }

    /// Explicit inputs, or the prepared corpus in the output directory.
    fn analysis_inputs(&self) -> Vec<PathBuf> {
        if self.inputs.is_empty() {
            vec![self.output_dir.join(PREPARED_FILE)]
        } else {
            self.inputs.clone()
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let file = FileSettings::load(cli.global.config.as_deref())?;
    let config = PipelineConfig::resolve(&cli.global, &file)?;
    fs::create_dir_all(&config.output_dir)
        .map_err(|e| CliError::io("output", format!("{}: {e}", config.output_dir.display())))?;
    match cli.command {
        Command::Prepare(a) => cmd_prepare(&config, &file, &a),
        Command::Metrics(a) => cmd_metrics(&config, &file, &a),
        Command::Timeline(a) => cmd_timeline(&config, &file, &a),
        Command::Topics(a) => cmd_topics(&config, &file, &a),
        Command::Propagation(a) => cmd_propagation(&config, &file, &a),
        Command::Synth(a) => cmd_synth(&config, &file, &a),
        Command::Report(_) => cmd_report(&config),
    }
}

/// Writes through a temporary file so a failed command leaves no partial output.
fn write_file(
    stage: &'static str,
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> CliResult<()> {
    let tmp = path.with_extension("partial");
    let io_err = |e: std::io::Error| CliError::io(stage, format!("{}: {e}", path.display()));
    let file = File::create(&tmp).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err)?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err)
}

fn write_json(stage: &'static str, path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_file(stage, path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

#[derive(Debug, Default, Serialize)]
struct LoadStats {
    records: usize,
    malformed: usize,
    duplicate_ids: usize,
}

/// Loads and merges every input; ids repeated across files keep their first
/// occurrence.
fn load_inputs(stage: &'static str, inputs: &[PathBuf]) -> CliResult<(Corpus, LoadStats)> {
    if inputs.is_empty() {
        return Err(CliError::config(stage, "no --input given"));
    }
    let mut stats = LoadStats::default();
    let mut messages = Vec::new();
    let mut sources = Vec::new();
    for path in inputs {
        if !path.is_file() {
            return Err(CliError::io(
                stage,
                format!("{} does not exist", path.display()),
            ));
        }
        let outcome =
            load_corpus(path, InputFormat::from_path(path)).map_err(|e| corpus_error(stage, e))?;
        stats.records += outcome.records;
        stats.malformed += outcome.malformed;
        stats.duplicate_ids += outcome.duplicate_ids;
        sources.extend(outcome.corpus.provenance.sources.iter().cloned());
        messages.extend(outcome.corpus.messages().iter().cloned());
    }
    let (mut corpus, cross_file_dups) = Corpus::from_messages(messages);
    stats.duplicate_ids += cross_file_dups;
    corpus.provenance.sources = sources;
    Ok((corpus, stats))
}

fn load_regions(config: &PipelineConfig) -> CliResult<Option<Vec<Region>>> {
    let Some(path) = &config.region_table else {
        return Ok(None);
    };
    let file = File::open(path)
        .map_err(|e| CliError::io("regions", format!("{}: {e}", path.display())))?;
    let regions = read_region_table(file).map_err(|e| CliError::config("regions", e))?;
    Ok(Some(regions))
}

/// Fills in the region of located messages that have none, from the nearest
/// centroid in the table.
fn assign_missing_regions(corpus: &Corpus, regions: Option<&[Region]>) -> CliResult<Corpus> {
    let Some(regions) = regions else {
        return Ok(corpus.clone());
    };
    let messages = corpus
        .messages()
        .iter()
        .map(|m| {
            let mut m = m.clone();
            if let (None, Some(p)) = (&m.region, m.point) {
                let region =
                    assign_region(p, regions).map_err(|e| CliError::config("regions", e))?;
                m.region = Some(region.key.clone());
            }
            Ok(m)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(corpus.derive("assign_region", messages))
}

fn load_analysis_corpus(stage: &'static str, config: &PipelineConfig) -> CliResult<Corpus> {
    let (corpus, _) = load_inputs(stage, &config.analysis_inputs())?;
    let regions = load_regions(config)?;
    assign_missing_regions(&corpus, regions.as_deref())
}

#[derive(Debug, Serialize)]
struct StageStats {
    stage: String,
    before: usize,
    after: usize,
    dropped: usize,
}

#[derive(Debug, Serialize)]
struct PrepareStats {
    inputs: Vec<String>,
    #[serde(flatten)]
    load: LoadStats,
    loaded: usize,
    stages: Vec<StageStats>,
    output: usize,
    languages: BTreeMap<String, usize>,
}

fn cmd_prepare(config: &PipelineConfig, file: &FileSettings, args: &PrepareArgs) -> CliResult<()> {
    const STAGE: &str = "prepare";
    let keywords_path = file.pick_opt("keywords", args.keywords.clone())?;
    let keywords = match &keywords_path {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::io(STAGE, format!("{}: {e}", path.display())))?;
            KeywordSet::from_json(&text)
        }
        None => KeywordSet::single(&[DEFAULT_KEYWORD]),
    }
    .map_err(|e| corpus_error(STAGE, e))?;
    let mode = match file
        .pick(
            "match-mode",
            args.match_mode.clone(),
            "substring".to_string(),
        )?
        .as_str()
    {
        "substring" => MatchMode::Substring,
        "token" => MatchMode::Token,
        other => {
            return Err(CliError::config(
                STAGE,
                format!("unknown match mode {other:?}"),
            ))
        }
    };
    let min_lang = file.pick(
        "min-lang-count",
        args.min_lang_count,
        DEFAULT_MIN_LANG_COUNT,
    )?;
    let min_home = file.pick(
        "min-home-points",
        args.min_home_points,
        DEFAULT_MIN_HOME_POINTS,
    )?;
    let traces: HashMap<String, UserTrace> = match file.pick_opt("traces", args.traces.clone())? {
        Some(path) => {
            require_file(STAGE, &path)?;
            load_traces(&path)
                .map_err(|e| corpus_error(STAGE, e))?
                .traces
        }
        None => HashMap::new(),
    };
    let regions = load_regions(config)?;

    let (loaded, load) = load_inputs(STAGE, &config.inputs)?;
    let keyworded = filter_keyword(&loaded, &keywords, mode);
    let deduped = dedup(&keyworded);
    let pruned = prune_languages(&deduped, min_lang).map_err(|e| corpus_error(STAGE, e))?;
    let located = attach_estimated_locations(&pruned, &traces, min_home);
    let prepared = assign_missing_regions(&located, regions.as_deref())?;

    let stages = [
        ("keyword", &loaded, &keyworded),
        ("dedup", &keyworded, &deduped),
        ("prune_languages", &deduped, &pruned),
        ("estimate_home", &pruned, &located),
    ]
    .into_iter()
    .map(|(stage, before, after)| StageStats {
        stage: stage.to_string(),
        before: before.len(),
        after: after.len(),
        dropped: before.len() - after.len(),
    })
    .collect();
    let stats = PrepareStats {
        inputs: config
            .inputs
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
        loaded: loaded.len(),
        load,
        stages,
        output: prepared.len(),
        languages: prepared
            .language_counts()
            .into_iter()
            .map(|(l, n)| (l.to_string(), n))
            .collect(),
    };
    write_file(STAGE, &config.out(PREPARED_FILE), |w| {
        write_corpus(&prepared, w).map_err(|e| match e {
            CorpusError::Write(e) => e,
            other => std::io::Error::other(other.to_string()),
        })
    })?;
    write_json(STAGE, &config.out("prepare_stats.json"), &stats)
}

/// Messages inside `[event_start, event_start + horizon)` when a start is
/// configured, else all of them.
fn event_scope<'a>(config: &PipelineConfig, corpus: &'a Corpus) -> Vec<&'a crate::corpus::Message> {
    corpus
        .messages()
        .iter()
        .filter(|m| {
            config
                .event_start
                .is_none_or(|s| m.timestamp >= s && m.timestamp < s + config.horizon_secs)
        })
        .collect()
}

fn cmd_metrics(config: &PipelineConfig, file: &FileSettings, args: &MetricsArgs) -> CliResult<()> {
    const STAGE: &str = "metrics";
    let thresholds: Vec<f64> = parse_list(
        "thresholds",
        &file.pick(
            "thresholds",
            args.thresholds.clone(),
            DEFAULT_THRESHOLDS.to_string(),
        )?,
    )?;
    let mode = parse_spread_mode(&file.pick(
        "spread-mode",
        args.spread_mode.clone(),
        "per-message".to_string(),
    )?)?;
    let corpus = load_analysis_corpus(STAGE, config)?;
    let scope = event_scope(config, &corpus);
    let report = locality_report_with(&scope, mode).map_err(|e| metrics_error(STAGE, e))?;
    let thresholds_km: Vec<f64> = thresholds.iter().map(|&t| config.units.to_km(t)).collect();
    let cdf = distance_cdf(&scope, report.midpoint, &thresholds_km)
        .map_err(|e| metrics_error(STAGE, e))?;

    write_file(STAGE, &config.out("metrics.csv"), |w| {
        write_report_csv(w, &[("event".to_string(), report)], config.units)
    })?;
    write_file(STAGE, &config.out("distance_cdf.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            format!("threshold_{}", config.units.suffix()),
            "fraction".to_string(),
        ])?;
        for (t, f) in thresholds.iter().zip(&cdf) {
            c.write_record([t.to_string(), f.to_string()])?;
        }
        c.flush()
    })
}

/// Windows over the configured horizon, starting at the event start or the
/// earliest message.
fn window_series(
    stage: &'static str,
    config: &PipelineConfig,
    corpus: &Corpus,
) -> CliResult<(WindowSeries, usize)> {
    let origin = config
        .event_start
        .or_else(|| corpus.messages().first().map(|m| m.timestamp))
        .ok_or_else(|| CliError::empty(stage, "corpus is empty"))?;
    let spec = WindowSpec::covering(origin, config.window_secs, config.horizon_secs)
        .map_err(|e| temporal_error(stage, e))?;
    let series = bucket(corpus.messages(), spec);
    let peak = find_peak(&series).map_err(|e| temporal_error(stage, e))?;
    let aligned = align_to_peak(&series, peak).map_err(|e| temporal_error(stage, e))?;
    Ok((aligned, peak))
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn cmd_timeline(
    config: &PipelineConfig,
    file: &FileSettings,
    args: &TimelineArgs,
) -> CliResult<()> {
    const STAGE: &str = "timeline";
    let smooth = file.pick_flag("lowess", args.lowess)?;
    let frac = file.pick("frac", args.frac, DEFAULT_FRAC)?;
    let iters = file.pick("robust-iters", args.robust_iters, DEFAULT_ROBUST_ITERS)?;
    let mode = parse_spread_mode(&file.pick(
        "spread-mode",
        args.spread_mode.clone(),
        "per-message".to_string(),
    )?)?;
    let corpus = load_analysis_corpus(STAGE, config)?;
    let (series, _) = window_series(STAGE, config, &corpus)?;
    let reports =
        metric_series(&series, corpus.messages(), mode).map_err(|e| temporal_error(STAGE, e))?;

    let focus: Vec<Option<f64>> = reports.iter().map(|r| r.map(|r| r.focus)).collect();
    let entropy: Vec<Option<f64>> = reports.iter().map(|r| r.map(|r| r.entropy)).collect();
    let spread: Vec<Option<f64>> = reports
        .iter()
        .map(|r| r.map(|r| config.units.from_km(r.spread_km)))
        .collect();
    let mut columns = vec![focus, entropy, spread];
    let spread_name = format!("spread_{}", config.units.suffix());
    let mut header = vec![
        "window_start_epoch".to_string(),
        "minutes_from_peak".to_string(),
        "count".to_string(),
        "focus".to_string(),
        "entropy_bits".to_string(),
        spread_name.clone(),
    ];
    if smooth {
        let smoothed = columns
            .iter()
            .map(|c| smooth_sparse(c, frac, iters))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| temporal_error(STAGE, e))?;
        columns.extend(smoothed);
        header.extend([
            "focus_lowess".to_string(),
            "entropy_bits_lowess".to_string(),
            format!("{spread_name}_lowess"),
        ]);
    }

    write_file(STAGE, &config.out("timeline.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(&header)?;
        for k in 0..series.spec.count {
            let mut row = vec![
                series.spec.window_start(k).to_string(),
                opt_cell(series.minutes_from_peak(k)),
                series.counts[k].to_string(),
            ];
            row.extend(columns.iter().map(|col| opt_cell(col[k])));
            c.write_record(&row)?;
        }
        c.flush()
    })
}

#[derive(Debug, Serialize)]
struct KSelectionRow {
    k: usize,
    perplexity: f64,
}

fn cmd_topics(config: &PipelineConfig, file: &FileSettings, args: &TopicsArgs) -> CliResult<()> {
    const STAGE: &str = "topics";
    let candidates: Option<Vec<usize>> = file
        .pick_opt("candidates", args.candidates.clone())?
        .map(|s| parse_list("candidates", &s))
        .transpose()?;
    let fixed_k = file.pick("k", args.k, DEFAULT_K)?;
    let mut base = LdaConfig::new(fixed_k, config.seed).with_iters(file.pick(
        "iters",
        args.iters,
        DEFAULT_ITERS,
    )?);
    base.alpha = file.pick_opt("alpha", args.alpha)?;
    base.beta = file.pick("beta", args.beta, DEFAULT_BETA)?;
    let stopwords: Vec<String> =
        match file.pick_opt::<PathBuf>("stopwords", args.stopwords.clone())? {
            Some(path) => fs::read_to_string(&path)
                .map_err(|e| CliError::io(STAGE, format!("{}: {e}", path.display())))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
            None => Vec::new(),
        };
    let options = PreprocessOptions {
        language: file
            .pick("language", args.language.clone(), "en".to_string())?
            .to_lowercase(),
        min_df: file.pick("min-df", args.min_df, DEFAULT_MIN_DF)?,
        ..PreprocessOptions::default()
    }
    .with_stopwords(stopwords.iter().map(String::as_str));
    let per_message = file.pick_flag("per-message", args.per_message)?;

    let corpus = load_analysis_corpus(STAGE, config)?;
    let docs = preprocess(&corpus, &options).map_err(|e| topic_error(STAGE, e))?;
    let perplexity_config = PerplexityConfig {
        seed: config.seed,
        ..PerplexityConfig::default()
    };
    let selection = candidates
        .map(|c| choose_k(&docs, &c, DEFAULT_HELDOUT_FRAC, &base, &perplexity_config))
        .transpose()
        .map_err(|e| topic_error(STAGE, e))?;
    if let Some(sel) = &selection {
        base.k = sel.chosen;
    }
    let model = gibbs_train(&docs, &base).map_err(|e| topic_error(STAGE, e))?;
    let labeled = if per_message {
        assign_topics_per_message(
            &model,
            &corpus,
            &options.stopwords,
            DEFAULT_FOLD_IN_ITERS,
            config.seed,
        )
    } else {
        assign_topics(&model, &corpus)
    }
    .corpus;
    let counts = topic_counts(&model, &labeled);
    let by_region = dominant_topic_by_region(&labeled);

    write_file(STAGE, &config.out("topic_model.json"), |w| {
        model.write_json(w)
    })?;
    write_file(STAGE, &config.out("topic_report.csv"), |w| {
        write_topic_report(w, &model, &counts)
    })?;
    write_file(STAGE, &config.out("labeled.ndjson"), |w| {
        write_corpus(&labeled, w).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    write_file(STAGE, &config.out("region_topics.csv"), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["region", "dominant_topic"])?;
        for (region, topic) in &by_region {
            c.write_record([region.clone(), topic.to_string()])?;
        }
        c.flush()
    })?;
    if let Some(sel) = selection {
        write_file(STAGE, &config.out("k_selection.csv"), |w| {
            let mut c = csv::Writer::from_writer(w);
            for (k, perplexity) in sel.scores {
                c.serialize(KSelectionRow { k, perplexity })?;
            }
            c.flush()
        })?;
    }
    Ok(())
}

fn cmd_propagation(
    config: &PipelineConfig,
    file: &FileSettings,
    args: &PropagationArgs,
) -> CliResult<()> {
    const STAGE: &str = "propagation";
    let graph_path: PathBuf = file
        .pick_opt("graph", args.graph.clone())?
        .ok_or_else(|| CliError::config(STAGE, "--graph is required"))?;
    require_file(STAGE, &graph_path)?;
    let graph_users_only = file.pick_flag("graph-users-only", args.graph_users_only)?;
    let graph = load_graph(&graph_path)
        .map_err(|e| match e {
            PropagationError::UnreadableFile { .. } => CliError::io(STAGE, e),
            other => CliError::config(STAGE, other),
        })?
        .graph;
    let (corpus, _) = load_inputs(STAGE, &config.analysis_inputs())?;
    let (series, peak) = window_series(STAGE, config, &corpus)?;
    let forest = classify(
        corpus.messages(),
        &graph,
        ClassifyOptions { graph_users_only },
    );
    let curve = child_proportion_curve(&forest, series.spec, peak).map_err(|e| match e {
        PropagationError::EmptyForest => CliError::empty(STAGE, e),
        other => CliError::config(STAGE, other),
    })?;
    write_file(STAGE, &config.out("propagation_nodes.csv"), |w| {
        write_classification_csv(w, &forest)
    })?;
    write_file(STAGE, &config.out("child_curve.csv"), |w| {
        write_curve_csv(w, &curve)
    })
}

fn cmd_synth(config: &PipelineConfig, file: &FileSettings, args: &SynthArgs) -> CliResult<()> {
    const STAGE: &str = "synth";
    let defaults = SynthSpec::default();
    let lat = file.pick("center-lat", args.center_lat, defaults.center.lat())?;
    let lon = file.pick("center-lon", args.center_lon, defaults.center.lon())?;
    let spec = SynthSpec {
        center: GeoPoint::new(lat, lon).map_err(|e| CliError::config(STAGE, e))?,
        n_messages: file.pick("n-messages", args.n_messages, defaults.n_messages)?,
        n_users: file.pick("n-users", args.n_users, defaults.n_users)?,
        n_regions: file.pick("n-regions", args.n_regions, defaults.n_regions)?,
        spread_growth: file.pick("spread-growth", args.spread_growth, defaults.spread_growth)?,
        follow_density: file.pick(
            "follow-density",
            args.follow_density,
            defaults.follow_density,
        )?,
        seed: config.seed,
        start: config.event_start.unwrap_or(defaults.start),
        window_secs: config.window_secs,
        n_windows: usize::try_from(
            (config.horizon_secs + config.window_secs - 1) / config.window_secs,
        )
        .expect("positive horizon"),
    };
    let event = synth_event(&spec).map_err(|e| CliError::config(STAGE, e))?;
    write_file(STAGE, &config.out("messages.ndjson"), |w| {
        write_corpus(&event.corpus, w).map_err(|e| std::io::Error::other(e.to_string()))
    })?;
    write_file(STAGE, &config.out("traces.ndjson"), |w| {
        write_traces(w, &event.traces)
    })?;
    write_file(STAGE, &config.out("regions.csv"), |w| {
        write_region_table(w, &event.regions)
    })?;
    write_file(STAGE, &config.out("edges.csv"), |w| {
        write_edges(w, &event.graph)
    })
}

fn cmd_report(config: &PipelineConfig) -> CliResult<()> {
    const STAGE: &str = "report";
    let corpus = load_analysis_corpus(STAGE, config)?;
    let mut regions: BTreeMap<&str, usize> = BTreeMap::new();
    for m in corpus.messages() {
        *regions
            .entry(m.region.as_deref().unwrap_or(""))
            .or_insert(0) += 1;
    }
    let total = corpus.len().max(1) as f64;
    let write_counts = |name: &str, key: &str, counts: &BTreeMap<&str, usize>| {
        write_file(STAGE, &config.out(name), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record([key, "count", "share"])?;
            let mut rows: Vec<(&&str, &usize)> = counts.iter().collect();
            rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
            for (k, n) in rows {
                c.write_record([
                    k.to_string(),
                    n.to_string(),
                    (*n as f64 / total).to_string(),
                ])?;
            }
            c.flush()
        })
    };
    write_counts(
        "report_languages.csv",
        "language",
        &corpus.language_counts(),
    )?;
    write_counts("report_regions.csv", "region", &regions)
}
