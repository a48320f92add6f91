//! Cascade datasets: parsing, validation, vocabularies, splitting and
//! synthetic corpus generation.
//!
//! Cascade file: one cascade per line, space separated `user,timestamp`
//! events. Social edge file: one `follower followee` pair per line.
//! Vocabulary file: `user<TAB>index` per line, sorted by index.

mod split;
mod synth;

pub use split::{split_dataset, DatasetSplit, SplitRatios};
pub use synth::{generate_synthetic, simulate_cascade, SynthConfig, SyntheticCorpus, MAX_SEED_RETRIES};

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset contains no usable cascades")]
    Empty,
    #[error("line {line}: unknown user `{user}`")]
    UnknownUser { line: usize, user: String },
    #[error("need at least 3 cascades to split, got {0}")]
    TooFewCascades(usize),
    #[error("could not grow a cascade of length >= 2 after {0} attempts")]
    RetriesExhausted(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{}: {error}", path.display())]
    File { path: PathBuf, error: Box<DataError> },
    #[error("{}: {error}", path.display())]
    Io {
        path: PathBuf,
        error: std::io::Error,
    },
}

impl DataError {
    fn in_file(self, path: &Path) -> Self {
        DataError::File {
            path: path.to_path_buf(),
            error: Box::new(self),
        }
    }
}

fn read_file(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|error| DataError::Io {
        path: path.to_path_buf(),
        error,
    })
}

/// Dense index of a user in the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId(pub usize);

impl UserId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Bijection between opaque external user ids and dense indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, UserId>,
}

/// What to do with a user id that is not yet in the vocabulary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnknownUserPolicy {
    #[default]
    Error,
    Extend,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<UserId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: UserId) -> &str {
        &self.names[id.0]
    }

    pub fn insert(&mut self, name: &str) -> UserId {
        if let Some(id) = self.get(name) {
            return id;
        }
        let id = UserId(self.names.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    fn resolve(&mut self, name: &str, policy: UnknownUserPolicy, line: usize) -> Result<UserId, DataError> {
        match policy {
            UnknownUserPolicy::Extend => Ok(self.insert(name)),
            UnknownUserPolicy::Error => self.get(name).ok_or_else(|| DataError::UnknownUser {
                line,
                user: name.to_string(),
            }),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            let _ = writeln!(out, "{name}\t{i}");
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self, DataError> {
        let mut vocab = Vocab::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let (name, idx) = raw.split_once('\t').ok_or_else(|| DataError::Parse {
                line,
                message: "expected `user<TAB>index`".into(),
            })?;
            let idx: usize = idx.trim().parse().map_err(|_| DataError::Parse {
                line,
                message: format!("bad index `{idx}`"),
            })?;
            if idx != vocab.len() || vocab.get(name).is_some() {
                return Err(DataError::Parse {
                    line,
                    message: format!("index {idx} for `{name}` breaks the dense ordering"),
                });
            }
            vocab.insert(name);
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::parse_tsv(&read_file(path)?).map_err(|e| e.in_file(path))
    }
}

/// One repost: `user` was infected at `time`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub user: UserId,
    pub time: f64,
}

impl Event {
    pub fn new(user: UserId, time: f64) -> Self {
        Self { user, time }
    }
}

/// Timestamp-ordered infection sequence of one item.
///
/// Holds at least two events, no user twice, and non-decreasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct Cascade {
    events: Vec<Event>,
}

impl Cascade {
    pub fn new(events: Vec<Event>) -> Result<Self, DataError> {
        if events.len() < 2 {
            return Err(DataError::InvalidArgument(format!(
                "a cascade needs at least 2 events, got {}",
                events.len()
            )));
        }
        validate_events(&events)?;
        Ok(Self { events })
    }

    /// Sorts by time (stable), keeps each user's earliest event and
    /// truncates to `max_len`. Returns `None` if fewer than two events remain.
    pub fn canonicalize(mut events: Vec<Event>, max_len: usize) -> Option<Self> {
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let mut seen = HashSet::new();
        events.retain(|e| seen.insert(e.user));
        events.truncate(max_len);
        (events.len() >= 2).then_some(Self { events })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.events.iter().map(|e| e.user)
    }

    /// Copy with every timestamp passed through `f`.
    pub fn map_times(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            events: self
                .events
                .iter()
                .map(|e| Event::new(e.user, f(e.time)))
                .collect(),
        }
    }
}

/// Checks ordering and uniqueness of an event list of any length.
pub fn validate_events(events: &[Event]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for (k, e) in events.iter().enumerate() {
        if !e.time.is_finite() || e.time < 0.0 {
            return Err(DataError::InvalidArgument(format!("bad timestamp {} at event {k}", e.time)));
        }
        if k > 0 && events[k - 1].time > e.time {
            return Err(DataError::InvalidArgument(format!("timestamps decrease at event {k}")));
        }
        if !seen.insert(e.user) {
            return Err(DataError::InvalidArgument(format!("user {} repeated", e.user.0)));
        }
    }
    Ok(())
}

/// `src` follows `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SocialEdge {
    pub src: UserId,
    pub dst: UserId,
}

/// Result of parsing a cascade file.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCascades {
    pub cascades: Vec<Cascade>,
    /// Lines that held fewer than two distinct users after deduplication.
    pub dropped: usize,
}

fn parse_event(token: &str, line: usize) -> Result<(&str, f64), DataError> {
    let (user, time) = token.rsplit_once(',').ok_or_else(|| DataError::Parse {
        line,
        message: format!("event `{token}` is not `user,timestamp`"),
    })?;
    if user.is_empty() {
        return Err(DataError::Parse {
            line,
            message: format!("event `{token}` has an empty user id"),
        });
    }
    let time: f64 = time.parse().map_err(|_| DataError::Parse {
        line,
        message: format!("bad timestamp `{time}`"),
    })?;
    if !time.is_finite() || time < 0.0 {
        return Err(DataError::Parse {
            line,
            message: format!("timestamp {time} must be finite and non-negative"),
        });
    }
    Ok((user, time))
}

/// Parses cascade lines, resolving users through `vocab` per `policy`.
pub fn parse_cascades(text: &str, max_len: usize, vocab: &mut Vocab, policy: UnknownUserPolicy) -> Result<LoadedCascades, DataError> {
    if max_len < 2 {
        return Err(DataError::InvalidArgument(format!("max_len must be at least 2, got {max_len}")));
    }
    let mut cascades = Vec::new();
    let mut dropped = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut events = Vec::new();
        for token in raw.split_whitespace() {
            let (user, time) = parse_event(token, line)?;
            events.push(Event::new(vocab.resolve(user, policy, line)?, time));
        }
        match Cascade::canonicalize(events, max_len) {
            Some(c) => cascades.push(c),
            None => dropped += 1,
        }
    }
    if cascades.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(LoadedCascades { cascades, dropped })
}

/// Loads a cascade file with a fresh vocabulary built in first-seen order.
pub fn load_cascades(path: &Path, max_len: usize) -> Result<(Vec<Cascade>, Vocab), DataError> {
    let mut vocab = Vocab::new();
    let loaded = load_cascades_with(path, max_len, &mut vocab, UnknownUserPolicy::Extend)?;
    if loaded.dropped > 0 {
        log::warn!("{}: dropped {} cascades shorter than 2 events", path.display(), loaded.dropped);
    }
    Ok((loaded.cascades, vocab))
}

pub fn load_cascades_with(path: &Path, max_len: usize, vocab: &mut Vocab, policy: UnknownUserPolicy) -> Result<LoadedCascades, DataError> {
    let text = read_file(path)?;
    parse_cascades(&text, max_len, vocab, policy).map_err(|e| e.in_file(path))
}

/// Result of parsing a social edge file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadedEdges {
    pub edges: Vec<SocialEdge>,
    pub self_loops_skipped: usize,
    pub duplicates_collapsed: usize,
}

pub fn parse_social_edges(text: &str, vocab: &mut Vocab, policy: UnknownUserPolicy) -> Result<LoadedEdges, DataError> {
    let mut out = LoadedEdges::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        match tokens.as_slice() {
            [] => continue,
            [src, dst] => {
                if src == dst {
                    out.self_loops_skipped += 1;
                    continue;
                }
                let edge = SocialEdge {
                    src: vocab.resolve(src, policy, line)?,
                    dst: vocab.resolve(dst, policy, line)?,
                };
                if seen.insert(edge) {
                    out.edges.push(edge);
                } else {
                    out.duplicates_collapsed += 1;
                }
            }
            _ => {
                return Err(DataError::Parse {
                    line,
                    message: format!("expected `follower followee`, got {} fields", tokens.len()),
                })
            }
        }
    }
    Ok(out)
}

pub fn load_social_edges(path: &Path, vocab: &mut Vocab, policy: UnknownUserPolicy) -> Result<LoadedEdges, DataError> {
    let text = read_file(path)?;
    let loaded = parse_social_edges(&text, vocab, policy).map_err(|e| e.in_file(path))?;
    if loaded.self_loops_skipped > 0 {
        log::warn!("{}: skipped {} self-loop lines", path.display(), loaded.self_loops_skipped);
    }
    Ok(loaded)
}

pub fn format_events(events: &[Event], vocab: &Vocab) -> String {
    let mut line = String::new();
    for (k, e) in events.iter().enumerate() {
        if k > 0 {
            line.push(' ');
        }
        let _ = write!(line, "{},{}", vocab.name(e.user), e.time);
    }
    line
}

/// Canonical text form of a cascade list, one line per cascade.
pub fn write_cascades(cascades: &[Cascade], vocab: &Vocab) -> String {
    let mut out = String::new();
    for c in cascades {
        out.push_str(&format_events(c.events(), vocab));
        out.push('\n');
    }
    out
}

pub fn write_social_edges(edges: &[SocialEdge], vocab: &Vocab) -> String {
    let mut out = String::new();
    for e in edges {
        let _ = writeln!(out, "{} {}", vocab.name(e.src), vocab.name(e.dst));
    }
    out
}

/// Min-max map of raw timestamps onto `[0, 1]`, fitted on training events.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeNormalizer {
    pub min: f64,
    pub max: f64,
}

impl TimeNormalizer {
    pub fn fit(cascades: &[Cascade]) -> Result<Self, DataError> {
        let mut times = cascades.iter().flat_map(|c| c.events().iter().map(|e| e.time));
        let first = times.next().ok_or(DataError::Empty)?;
        let (min, max) = times.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t)));
        Ok(Self { min, max })
    }

    /// Values outside the fitted range are clamped.
    pub fn normalize(&self, t: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            return 0.0;
        }
        ((t - self.min) / span).clamp(0.0, 1.0)
    }

    pub fn apply(&self, cascade: &Cascade) -> Cascade {
        cascade.map_times(|t| self.normalize(t))
    }

    pub fn apply_all(&self, cascades: &[Cascade]) -> Vec<Cascade> {
        cascades.iter().map(|c| self.apply(c)).collect()
    }
}
