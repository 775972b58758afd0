//! Transition logs, count tables and sampled transition kernels.
//!
//! A log is a sequence of [`TransitionEvent`]s, one JSON object per line.
//! Counting turns it into a [`CountTable`] and [`estimate_kernel`] turns the
//! table into a sparse [`KernelEstimate`] under one of the normalization
//! policies in [`KernelPolicy`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Reserved destination name for rejected generation attempts.
pub const ESCAPE: &str = "__ESCAPE__";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("log contains no valid events")]
    EmptyLog,
    #[error("invalid state name {0:?}")]
    InvalidState(String),
    #[error("bad kernel policy parameter: {0}")]
    BadPolicyParam(String),
    #[error("unknown state {0:?}")]
    UnknownState(String),
    #[error("log ratio of a state with itself is undefined ({0:?})")]
    SelfPair(String),
    #[error("counts csv line {line}: {message}")]
    BadCountRow { line: u64, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LedgerError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::EmptyLog => "EMPTY_LOG",
            LedgerError::InvalidState(_) => "INVALID_STATE",
            LedgerError::BadPolicyParam(_) => "BAD_POLICY_PARAM",
            LedgerError::UnknownState(_) => "UNKNOWN_STATE",
            LedgerError::SelfPair(_) => "SELF_PAIR",
            LedgerError::BadCountRow { .. } => "BAD_COUNT_ROW",
            LedgerError::Csv(_) => "CSV",
            LedgerError::Io(_) => "IO",
        }
    }
}

/// Opaque agent state identifier. Surrounding whitespace is trimmed, nothing
/// else is normalized.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct State(String);

impl State {
    pub fn new(raw: &str) -> Result<Self, LedgerError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed == ESCAPE {
            return Err(LedgerError::InvalidState(raw.to_string()));
        }
        Ok(State(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for State {
    type Error = LedgerError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        State::new(&value)
    }
}

impl From<State> for String {
    fn from(value: State) -> Self {
        value.0
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for State {
    type Err = LedgerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        State::new(s)
    }
}

/// Where a transition attempt ended.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Destination {
    State(State),
    Escape,
}

impl Destination {
    pub fn parse(raw: &str) -> Result<Self, LedgerError> {
        if raw.trim() == ESCAPE {
            Ok(Destination::Escape)
        } else {
            State::new(raw).map(Destination::State)
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Destination::State(s) => s.as_str(),
            Destination::Escape => ESCAPE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEvent {
    pub run_id: String,
    pub step: u64,
    pub from: State,
    pub to: Destination,
    pub reason: Option<String>,
    pub timestamp: Option<String>,
}

#[derive(Serialize)]
struct EventRecord<'a> {
    run: &'a str,
    step: u64,
    from: &'a str,
    to: &'a str,
    reason: Option<&'a str>,
    ts: Option<&'a str>,
}

impl TransitionEvent {
    /// One line of the log format, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        let record = EventRecord {
            run: &self.run_id,
            step: self.step,
            from: self.from.as_str(),
            to: self.to.as_str(),
            reason: self.reason.as_deref(),
            ts: self.timestamp.as_deref(),
        };
        serde_json::to_string(&record).expect("event record serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionLog {
    pub events: Vec<TransitionEvent>,
}

impl TransitionLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for event in &self.events {
            writeln!(out, "{}", event.to_json_line())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineErrorKind {
    MalformedLine,
    MissingField,
    DuplicateStep,
}

impl LineErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            LineErrorKind::MalformedLine => "MALFORMED_LINE",
            LineErrorKind::MissingField => "MISSING_FIELD",
            LineErrorKind::DuplicateStep => "DUPLICATE_STEP",
        }
    }
}

/// A rejected log line. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct LineError {
    pub line: usize,
    pub kind: LineErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub log: TransitionLog,
    pub rejected: Vec<LineError>,
}

fn required_str<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a str, String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s),
        Some(Value::String(_)) => Err(format!("field {key:?} is empty")),
        Some(other) => Err(format!("field {key:?} must be a string, got {other}")),
        None => Err(format!("missing field {key:?}")),
    }
}

fn optional_str(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Option<String>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(format!("field {key:?} must be a string or null, got {other}")),
    }
}

fn parse_record(line: &str) -> Result<TransitionEvent, (LineErrorKind, String)> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| (LineErrorKind::MalformedLine, e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or((LineErrorKind::MalformedLine, "record is not a JSON object".to_string()))?;
    let schema = |msg: String| (LineErrorKind::MissingField, msg);

    let run_id = required_str(obj, "run").map_err(schema)?.to_string();
    let step = match obj.get("step") {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| schema(format!("field \"step\" must be a nonnegative integer, got {v}")))?,
        None => return Err(schema("missing field \"step\"".to_string())),
    };
    let from_raw = required_str(obj, "from").map_err(schema)?;
    let from = State::new(from_raw).map_err(|_| schema(format!("invalid from state {from_raw:?}")))?;
    let to_raw = required_str(obj, "to").map_err(schema)?;
    let to = Destination::parse(to_raw).map_err(|_| schema(format!("invalid to state {to_raw:?}")))?;
    let reason = optional_str(obj, "reason").map_err(schema)?;
    let timestamp = optional_str(obj, "ts").map_err(schema)?;
    Ok(TransitionEvent { run_id, step, from, to, reason, timestamp })
}

/// Parses a line-delimited JSON log. Bad lines are collected in
/// [`ParsedLog::rejected`]; blank lines are skipped. Fails only on I/O errors
/// or when no line yields a valid event.
pub fn parse_transition_log<R: BufRead>(reader: R) -> Result<ParsedLog, LedgerError> {
    let mut parsed = ParsedLog::default();
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(event) => {
                if !seen.insert((event.run_id.clone(), event.step)) {
                    parsed.rejected.push(LineError {
                        line: idx + 1,
                        kind: LineErrorKind::DuplicateStep,
                        message: format!("step {} repeated in run {:?}", event.step, event.run_id),
                    });
                } else {
                    parsed.log.events.push(event);
                }
            }
            Err((kind, message)) => parsed.rejected.push(LineError { line: idx + 1, kind, message }),
        }
    }
    if parsed.log.is_empty() {
        return Err(LedgerError::EmptyLog);
    }
    Ok(parsed)
}

/// Directed transition counts N(g←f) and escape counts per source state.
///
/// Attempts are derived: `attempts(f) = Σ_g N(g←f) + escapes(f)`, self-loops
/// included.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountTable {
    counts: BTreeMap<(State, State), u64>,
    escapes: BTreeMap<State, u64>,
}

impl CountTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, from: &State, to: &Destination) {
        match to {
            Destination::State(g) => self.add_count(from, g, 1),
            Destination::Escape => self.add_escapes(from, 1),
        }
    }

    pub fn add_count(&mut self, from: &State, to: &State, n: u64) {
        if n > 0 {
            *self.counts.entry((from.clone(), to.clone())).or_insert(0) += n;
        }
    }

    pub fn add_escapes(&mut self, from: &State, n: u64) {
        if n > 0 {
            *self.escapes.entry(from.clone()).or_insert(0) += n;
        }
    }

    /// N(to←from).
    pub fn count(&self, from: &State, to: &State) -> u64 {
        self.counts.get(&(from.clone(), to.clone())).copied().unwrap_or(0)
    }

    pub fn escapes(&self, from: &State) -> u64 {
        self.escapes.get(from).copied().unwrap_or(0)
    }

    /// Σ_g N(g←f), self-loops included, escapes excluded.
    pub fn outgoing(&self, from: &State) -> u64 {
        self.counts
            .range((from.clone(), State(String::new()))..)
            .take_while(|((f, _), _)| f == from)
            .map(|(_, n)| *n)
            .sum()
    }

    pub fn attempts(&self, from: &State) -> u64 {
        self.outgoing(from) + self.escapes(from)
    }

    /// Σ_f N(g←f) over f ≠ g.
    pub fn incoming(&self, to: &State) -> u64 {
        self.counts
            .iter()
            .filter(|((f, g), _)| g == to && f != to)
            .map(|(_, n)| *n)
            .sum()
    }

    /// Every state that appears as a source or a destination.
    pub fn states(&self) -> BTreeSet<State> {
        let mut out = BTreeSet::new();
        for (f, g) in self.counts.keys() {
            out.insert(f.clone());
            out.insert(g.clone());
        }
        out.extend(self.escapes.keys().cloned());
        out
    }

    pub fn contains_state(&self, s: &State) -> bool {
        self.escapes.contains_key(s) || self.counts.keys().any(|(f, g)| f == s || g == s)
    }

    /// Nonzero directed counts as `(from, to, n)` in lexicographic order.
    pub fn transitions(&self) -> impl Iterator<Item = (&State, &State, u64)> {
        self.counts.iter().map(|((f, g), n)| (f, g, *n))
    }

    pub fn escape_rows(&self) -> impl Iterator<Item = (&State, u64)> {
        self.escapes.iter().map(|(f, n)| (f, *n))
    }

    /// Total non-escape transitions, self-loops included.
    pub fn total_transitions(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn total_escapes(&self) -> u64 {
        self.escapes.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty() && self.escapes.is_empty()
    }

    /// Writes the `from,to,count` CSV; escape rows use `to=__ESCAPE__`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LedgerError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["from", "to", "count"])?;
        let mut rows: Vec<(&str, &str, u64)> = self
            .transitions()
            .map(|(f, g, n)| (f.as_str(), g.as_str(), n))
            .chain(self.escape_rows().map(|(f, n)| (f.as_str(), ESCAPE, n)))
            .collect();
        rows.sort();
        for (f, g, n) in rows {
            w.write_record([f, g, &n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, LedgerError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["from", "to", "count"] {
            return Err(LedgerError::BadCountRow {
                line: 1,
                message: format!("expected header from,to,count, got {:?}", headers),
            });
        }
        let mut table = CountTable::new();
        let mut seen = HashSet::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let bad = |message: String| LedgerError::BadCountRow { line, message };
            let from = State::new(&record[0]).map_err(|e| bad(e.to_string()))?;
            let to = Destination::parse(&record[1]).map_err(|e| bad(e.to_string()))?;
            let n: u64 = record[2].parse().map_err(|_| bad(format!("bad count {:?}", &record[2])))?;
            if !seen.insert((from.clone(), to.clone())) {
                return Err(bad(format!("duplicate row {}->{}", from, to.as_str())));
            }
            match &to {
                Destination::State(g) => table.add_count(&from, g, n),
                Destination::Escape => table.add_escapes(&from, n),
            }
        }
        Ok(table)
    }
}

/// Tallies a log. Counting is order-independent.
pub fn count_transitions(log: &TransitionLog) -> Result<CountTable, LedgerError> {
    if log.is_empty() {
        return Err(LedgerError::EmptyLog);
    }
    let mut table = CountTable::new();
    for event in &log.events {
        table.record(&event.from, &event.to);
    }
    Ok(table)
}

/// How N₀(f) is chosen when turning counts into probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelPolicy {
    /// One global budget: T(g←f) = min(N(g←f)/budget, 1). The remainder of each
    /// row is escape mass.
    FixedBudget { budget: u64 },
    /// T(g←f) = N(g←f) / Σ_{g'≠f} N(g'←f); rows with fewer than
    /// `min_row_count` outgoing samples are dropped.
    RowNormalized { min_row_count: u64 },
    /// T(g←f) = N(g←f) / attempts(f), escapes and self-repeats included in the
    /// denominator.
    PerStateAttempts,
}

impl Default for KernelPolicy {
    fn default() -> Self {
        KernelPolicy::RowNormalized { min_row_count: 2 }
    }
}

impl KernelPolicy {
    pub fn validate(self) -> Result<Self, LedgerError> {
        match self {
            KernelPolicy::FixedBudget { budget: 0 } => {
                Err(LedgerError::BadPolicyParam("fixed budget must be positive".into()))
            }
            KernelPolicy::RowNormalized { min_row_count } if min_row_count < 2 => Err(
                LedgerError::BadPolicyParam(format!("min_row_count must be >= 2, got {min_row_count}")),
            ),
            ok => Ok(ok),
        }
    }

    /// Kernel weight of a raw count (the numerator of T).
    fn weight(self, n: u64) -> f64 {
        match self {
            KernelPolicy::FixedBudget { budget } => n.min(budget) as f64,
            _ => n as f64,
        }
    }

    /// Row normalizer N₀(f), or `None` when the row carries no kernel.
    fn row_norm(self, counts: &CountTable, from: &State) -> Option<f64> {
        match self {
            KernelPolicy::FixedBudget { budget } => Some(budget as f64),
            KernelPolicy::RowNormalized { min_row_count } => {
                if counts.outgoing(from) < min_row_count {
                    return None;
                }
                let off_diagonal = counts.outgoing(from) - counts.count(from, from);
                (off_diagonal > 0).then_some(off_diagonal as f64)
            }
            KernelPolicy::PerStateAttempts => {
                let a = counts.attempts(from);
                (a > 0).then_some(a as f64)
            }
        }
    }
}

impl KernelPolicy {
    /// T(to←from) from raw counts, ignoring row retention, so it is defined
    /// for any pair. Zero when the transition was never observed.
    pub fn raw_prob(self, counts: &CountTable, from: &State, to: &State) -> f64 {
        let n = counts.count(from, to);
        if n == 0 {
            return 0.0;
        }
        let norm = match self {
            KernelPolicy::FixedBudget { budget } => budget as f64,
            KernelPolicy::RowNormalized { .. } => (counts.outgoing(from) - counts.count(from, from)) as f64,
            KernelPolicy::PerStateAttempts => counts.attempts(from) as f64,
        };
        self.weight(n) / norm
    }
}

impl fmt::Display for KernelPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelPolicy::FixedBudget { budget } => write!(f, "fixed:{budget}"),
            KernelPolicy::RowNormalized { min_row_count } => write!(f, "rows:{min_row_count}"),
            KernelPolicy::PerStateAttempts => f.write_str("attempts"),
        }
    }
}

impl FromStr for KernelPolicy {
    type Err = LedgerError;

    /// Accepts `fixed:<N0>`, `rows[:<min_row_count>]` and `attempts`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let int = |a: Option<&str>| -> Result<u64, LedgerError> {
            let a = a.ok_or_else(|| LedgerError::BadPolicyParam(format!("{s:?} needs a value")))?;
            a.parse().map_err(|_| LedgerError::BadPolicyParam(format!("bad integer {a:?}")))
        };
        let policy = match kind {
            "fixed" => KernelPolicy::FixedBudget { budget: int(arg)? },
            "rows" => KernelPolicy::RowNormalized {
                min_row_count: if arg.is_some() { int(arg)? } else { 2 },
            },
            "attempts" if arg.is_none() => KernelPolicy::PerStateAttempts,
            _ => return Err(LedgerError::BadPolicyParam(format!("unknown policy {s:?}"))),
        };
        policy.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEntry {
    pub to: usize,
    pub count: u64,
    pub weight: f64,
}

/// One retained row of the kernel. T(to←from) = weight / norm.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub from: usize,
    pub norm: f64,
    pub entries: Vec<KernelEntry>,
}

impl KernelRow {
    pub fn mass(&self) -> f64 {
        self.entries.iter().map(|e| e.weight).sum::<f64>() / self.norm
    }
}

/// Sparse estimate of T(g←f). Self-loops are never stored.
#[derive(Debug, Clone)]
pub struct KernelEstimate {
    states: Vec<State>,
    index: HashMap<State, usize>,
    rows: Vec<KernelRow>,
    policy: KernelPolicy,
    total_samples: u64,
}

impl KernelEstimate {
    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn index_of(&self, s: &State) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn rows(&self) -> &[KernelRow] {
        &self.rows
    }

    pub fn policy(&self) -> KernelPolicy {
        self.policy
    }

    /// Non-escape transition samples behind the estimate, self-loops included.
    pub fn total_samples(&self) -> u64 {
        self.total_samples
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.entries.is_empty())
    }

    pub fn n_entries(&self) -> usize {
        self.rows.iter().map(|r| r.entries.len()).sum()
    }

    /// Number of rows that carry kernel mass.
    pub fn rows_with_mass(&self) -> usize {
        self.rows.iter().filter(|r| !r.entries.is_empty()).count()
    }

    fn row_of(&self, from: usize) -> Option<&KernelRow> {
        self.rows
            .binary_search_by_key(&from, |r| r.from)
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn prob_idx(&self, from: usize, to: usize) -> f64 {
        self.row_of(from)
            .and_then(|r| r.entries.iter().find(|e| e.to == to).map(|e| e.weight / r.norm))
            .unwrap_or(0.0)
    }

    /// T(to←from); zero when unmeasured or unknown.
    pub fn prob(&self, from: &State, to: &State) -> f64 {
        match (self.index_of(from), self.index_of(to)) {
            (Some(f), Some(g)) => self.prob_idx(f, g),
            _ => 0.0,
        }
    }

    pub fn has_row(&self, from: &State) -> bool {
        self.index_of(from).and_then(|f| self.row_of(f)).is_some()
    }

    /// 1 − Σ_g T(g←f) for retained rows.
    pub fn escape_mass(&self, from: &State) -> Option<f64> {
        self.index_of(from)
            .and_then(|f| self.row_of(f))
            .map(|r| 1.0 - r.mass())
    }

    /// All stored entries as `(from, to, prob, stderr)`. The standard error is
    /// the Poisson estimate prob/√N.
    pub fn entries(&self) -> impl Iterator<Item = (&State, &State, f64, f64)> + '_ {
        self.rows.iter().flat_map(move |r| {
            r.entries.iter().map(move |e| {
                let p = e.weight / r.norm;
                (&self.states[r.from], &self.states[e.to], p, p / (e.count as f64).sqrt())
            })
        })
    }

    /// Writes the `from,to,prob,stderr` CSV through `fmt_real`.
    pub fn write_csv<W: Write>(&self, out: W, fmt_real: impl Fn(f64) -> String) -> Result<(), LedgerError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["from", "to", "prob", "stderr"])?;
        for (f, g, p, se) in self.entries() {
            w.write_record([f.as_str(), g.as_str(), &fmt_real(p), &fmt_real(se)])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn estimate_kernel(counts: &CountTable, policy: KernelPolicy) -> Result<KernelEstimate, LedgerError> {
    let policy = policy.validate()?;
    let states: Vec<State> = counts.states().into_iter().collect();
    let index: HashMap<State, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();

    let mut by_row: BTreeMap<usize, Vec<KernelEntry>> = BTreeMap::new();
    for (f, g, n) in counts.transitions() {
        if f == g {
            continue;
        }
        by_row.entry(index[f]).or_default().push(KernelEntry { to: index[g], count: n, weight: policy.weight(n) });
    }
    let mut rows = Vec::new();
    for (i, s) in states.iter().enumerate() {
        if counts.attempts(s) == 0 {
            continue;
        }
        let Some(norm) = policy.row_norm(counts, s) else { continue };
        let mut entries = by_row.remove(&i).unwrap_or_default();
        entries.sort_by_key(|e| e.to);
        rows.push(KernelRow { from: i, norm, entries });
    }
    Ok(KernelEstimate { states, index, rows, policy, total_samples: counts.total_transitions() })
}

/// Which direction of a pair was never observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissingDirection {
    /// N(g←f) = 0.
    Forward,
    /// N(f←g) = 0.
    Reverse,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogRatio {
    Measured { value: f64, stderr: f64 },
    OneSided(MissingDirection),
}

/// log(T(g←f)/T(f←g)) under `policy`, with the Poisson standard error
/// sqrt(1/N(g←f) + 1/N(f←g)).
pub fn log_ratio_with_error(
    counts: &CountTable,
    policy: KernelPolicy,
    f: &State,
    g: &State,
) -> Result<LogRatio, LedgerError> {
    let policy = policy.validate()?;
    for s in [f, g] {
        if !counts.contains_state(s) {
            return Err(LedgerError::UnknownState(s.to_string()));
        }
    }
    if f == g {
        return Err(LedgerError::SelfPair(f.to_string()));
    }
    let forward = counts.count(f, g);
    let reverse = counts.count(g, f);
    match (forward, reverse) {
        (0, 0) => return Ok(LogRatio::OneSided(MissingDirection::Both)),
        (0, _) => return Ok(LogRatio::OneSided(MissingDirection::Forward)),
        (_, 0) => return Ok(LogRatio::OneSided(MissingDirection::Reverse)),
        _ => {}
    }
    let t_forward = policy.raw_prob(counts, f, g);
    let t_reverse = policy.raw_prob(counts, g, f);
    Ok(LogRatio::Measured {
        value: (t_forward / t_reverse).ln(),
        stderr: (1.0 / forward as f64 + 1.0 / reverse as f64).sqrt(),
    })
}
