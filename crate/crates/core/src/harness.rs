//! Conditioned word-generation agent.
//!
//! The agent holds a word whose letter indices sum to 100 and asks a
//! generator for another one. Valid answers become the next prompt; anything
//! else is logged as an escape and the prompt stays put.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{Destination, State, TransitionEvent, TransitionLog};

pub const TARGET_SUM: u32 = 100;
pub const API_KEY_ENV: &str = "BALANCE_LAB_API_KEY";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0:?} is not an uppercase A-Z word")]
    NonAlphabetic(String),
    #[error("invalid seed word {0:?}")]
    InvalidSeedWord(String),
    #[error("invalid generator binding: {0}")]
    BadBinding(String),
    #[error("invalid sampling request: {0}")]
    BadRequest(String),
    #[error("remote generator unreachable: {message} ({} events kept)", .partial.len())]
    RemoteUnreachable { message: String, partial: TransitionLog },
    #[error("log write failed: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::NonAlphabetic(_) => "NON_ALPHABETIC",
            HarnessError::InvalidSeedWord(_) => "INVALID_SEED_WORD",
            HarnessError::BadBinding(_) => "BAD_BINDING",
            HarnessError::BadRequest(_) => "BAD_REQUEST",
            HarnessError::RemoteUnreachable { .. } => "REMOTE_UNREACHABLE",
            HarnessError::Io(_) => "IO",
        }
    }
}

/// Σ of alphabet positions, A = 1 … Z = 26.
pub fn letter_sum(word: &str) -> Result<u32, HarnessError> {
    if word.is_empty() || !word.bytes().all(|b| b.is_ascii_uppercase()) {
        return Err(HarnessError::NonAlphabetic(word.to_string()));
    }
    Ok(word.bytes().map(|b| (b - b'A' + 1) as u32).sum())
}

/// An uppercase word with letter sum 100.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct WordState(String);

impl WordState {
    pub fn new(word: &str) -> Result<Self, HarnessError> {
        match letter_sum(word) {
            Ok(TARGET_SUM) => Ok(WordState(word.to_string())),
            _ => Err(HarnessError::InvalidSeedWord(word.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn to_state(&self) -> State {
        State::new(&self.0).expect("word states are nonempty")
    }
}

impl TryFrom<String> for WordState {
    type Error = HarnessError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        WordState::new(&s)
    }
}

impl From<WordState> for String {
    fn from(w: WordState) -> String {
        w.0
    }
}

impl fmt::Display for WordState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscapeReason {
    SelfRepeat,
    Sum,
    NotWord,
    Malformed,
}

impl EscapeReason {
    pub fn as_str(self) -> &'static str {
        match self {
            EscapeReason::SelfRepeat => "self",
            EscapeReason::Sum => "sum",
            EscapeReason::NotWord => "not_word",
            EscapeReason::Malformed => "malformed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Valid(WordState),
    Escape(EscapeReason),
}

pub fn validate_candidate(candidate: &str, prompt: &WordState, wordlist: Option<&HashSet<String>>) -> Validation {
    let candidate = candidate.trim();
    if candidate == prompt.as_str() {
        return Validation::Escape(EscapeReason::SelfRepeat);
    }
    match letter_sum(candidate) {
        Err(_) => Validation::Escape(EscapeReason::Malformed),
        Ok(s) if s != TARGET_SUM => Validation::Escape(EscapeReason::Sum),
        Ok(_) if wordlist.is_some_and(|w| !w.contains(candidate)) => Validation::Escape(EscapeReason::NotWord),
        Ok(_) => Validation::Valid(WordState(candidate.to_string())),
    }
}

/// Reads a newline-delimited word list, uppercasing each entry.
pub fn read_wordlist(text: &str) -> HashSet<String> {
    text.lines().map(|l| l.trim().to_ascii_uppercase()).filter(|l| !l.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubled after every failed attempt.
    pub initial_backoff: Duration,
    /// Prompt text; `{word}` is replaced by the current word.
    pub prompt_template: String,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl RemoteConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        RemoteConfig {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 5,
            initial_backoff: Duration::from_secs(1),
            prompt_template: "Reply with one English word, different from {word}, whose letter values \
                              (A=1, B=2, ..., Z=26) add up to 100."
                .to_string(),
            api_key: std::env::var(API_KEY_ENV).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorBinding {
    /// Metropolis sampler over a fixed potential: propose uniformly from
    /// `proposals`, accept with min(1, e^{−(V(g) − V(f))}), otherwise repeat
    /// the prompt word.
    ScriptedMetropolis { potentials: BTreeMap<WordState, f64>, proposals: Vec<WordState>, seed: u64 },
    RemoteHttp(RemoteConfig),
}

impl GeneratorBinding {
    fn validate(&self) -> Result<(), HarnessError> {
        match self {
            GeneratorBinding::ScriptedMetropolis { potentials, proposals, .. } => {
                if proposals.is_empty() {
                    return Err(HarnessError::BadBinding("proposal list is empty".into()));
                }
                if let Some(w) = proposals.iter().find(|w| !potentials.contains_key(*w)) {
                    return Err(HarnessError::BadBinding(format!("no potential for proposal {w}")));
                }
                if let Some((w, _)) = potentials.iter().find(|(_, v)| !v.is_finite()) {
                    return Err(HarnessError::BadBinding(format!("non-finite potential for {w}")));
                }
                Ok(())
            }
            GeneratorBinding::RemoteHttp(cfg) => {
                let uri: ureq::http::Uri = cfg
                    .endpoint
                    .parse()
                    .map_err(|e| HarnessError::BadBinding(format!("bad endpoint {:?}: {e}", cfg.endpoint)))?;
                if uri.scheme().is_none() || uri.authority().is_none() {
                    return Err(HarnessError::BadBinding(format!("endpoint {:?} is not an absolute URL", cfg.endpoint)));
                }
                Ok(())
            }
        }
    }
}

/// One source of candidate words.
pub trait Generator {
    fn generate(&mut self, prompt: &WordState) -> Result<String, HarnessError>;
}

pub struct ScriptedGenerator {
    potentials: BTreeMap<WordState, f64>,
    proposals: Vec<WordState>,
    rng: ChaCha8Rng,
}

impl ScriptedGenerator {
    /// Stream `stream` of the generator seeded with `seed`.
    pub fn new(potentials: BTreeMap<WordState, f64>, proposals: Vec<WordState>, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        ScriptedGenerator { potentials, proposals, rng }
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&mut self, prompt: &WordState) -> Result<String, HarnessError> {
        let g = &self.proposals[self.rng.gen_range(0..self.proposals.len())];
        let vf = self.potentials.get(prompt).copied().unwrap_or(0.0);
        let vg = self.potentials[g];
        let accept = vg <= vf || self.rng.gen::<f64>() < (vf - vg).exp();
        Ok(if accept { g.as_str() } else { prompt.as_str() }.to_string())
    }
}

pub struct RemoteGenerator {
    cfg: RemoteConfig,
    agent: ureq::Agent,
    token: Regex,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: &'a str,
    model: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    text: String,
}

impl RemoteGenerator {
    pub fn new(cfg: RemoteConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        RemoteGenerator { cfg, agent, token: Regex::new(r"[A-Za-z]{2,}").unwrap() }
    }

    fn request_once(&self, prompt: &str) -> Result<String, ureq::Error> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let resp: RemoteResponse =
            req.send_json(RemoteRequest { prompt, model: &self.cfg.model })?.into_body().read_json()?;
        Ok(resp.text)
    }

    /// First alphabetic token of length ≥ 2, uppercased; empty when none.
    pub fn extract_candidate(&self, text: &str) -> String {
        self.token.find(text).map(|m| m.as_str().to_ascii_uppercase()).unwrap_or_default()
    }
}

impl Generator for RemoteGenerator {
    fn generate(&mut self, prompt: &WordState) -> Result<String, HarnessError> {
        let text = self.cfg.prompt_template.replace("{word}", prompt.as_str());
        let mut delay = self.cfg.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.request_once(&text) {
                Ok(reply) => return Ok(self.extract_candidate(&reply)),
                Err(e) if attempt >= self.cfg.max_retries => {
                    return Err(HarnessError::RemoteUnreachable {
                        message: format!("{} after {} attempts: {e}", self.cfg.endpoint, attempt + 1),
                        partial: TransitionLog::default(),
                    })
                }
                Err(_) => {
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SamplingOptions {
    /// Run ids are `{run_prefix}-{chain}`.
    pub run_prefix: String,
    pub wordlist: Option<HashSet<String>>,
    /// Produces the `ts` field; `None` leaves timestamps out.
    pub clock: Option<fn() -> String>,
}

impl SamplingOptions {
    pub fn new(run_prefix: &str) -> Self {
        SamplingOptions { run_prefix: run_prefix.to_string(), ..Default::default() }
    }
}

fn make_generator(binding: &GeneratorBinding, chain: u64) -> Box<dyn Generator + Send> {
    match binding {
        GeneratorBinding::ScriptedMetropolis { potentials, proposals, seed } => {
            Box::new(ScriptedGenerator::new(potentials.clone(), proposals.clone(), *seed, chain))
        }
        GeneratorBinding::RemoteHttp(cfg) => Box::new(RemoteGenerator::new(cfg.clone())),
    }
}

/// Runs `concurrency` independent chains from `seed_word` and returns exactly
/// `n_samples` events, ordered by run id then step.
///
/// Each chain owns its generator (scripted chains use RNG stream = chain
/// index), and every event goes through one writer that appends it to `sink`
/// as a JSON line. If a remote generator gives up, the remaining chains stop
/// and the events produced so far are returned inside the error.
pub fn run_sampling(
    binding: &GeneratorBinding,
    seed_word: &WordState,
    n_samples: usize,
    concurrency: usize,
    opts: &SamplingOptions,
    sink: Option<&mut dyn Write>,
) -> Result<TransitionLog, HarnessError> {
    if n_samples == 0 {
        return Err(HarnessError::BadRequest("n_samples must be at least 1".into()));
    }
    if concurrency == 0 {
        return Err(HarnessError::BadRequest("concurrency must be at least 1".into()));
    }
    binding.validate()?;
    if let GeneratorBinding::ScriptedMetropolis { potentials, .. } = binding {
        if !potentials.contains_key(seed_word) {
            return Err(HarnessError::InvalidSeedWord(format!("{seed_word} has no potential")));
        }
    }
    let chains = concurrency.min(n_samples);
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<Result<TransitionEvent, HarnessError>>();

    let mut events = Vec::with_capacity(n_samples);
    let mut failure = None;
    let mut write_error = None;
    thread::scope(|scope| {
        for chain in 0..chains {
            let quota = n_samples / chains + usize::from(chain < n_samples % chains);
            let tx = tx.clone();
            let stop = Arc::clone(&stop);
            let run_id = format!("{}-{chain}", opts.run_prefix);
            let mut generator = make_generator(binding, chain as u64);
            scope.spawn(move || {
                let mut prompt = seed_word.clone();
                for step in 0..quota as u64 {
                    if stop.load(Ordering::Relaxed) {
                        return;
                    }
                    let candidate = match generator.generate(&prompt) {
                        Ok(c) => c,
                        Err(e) => {
                            let _ = tx.send(Err(e));
                            return;
                        }
                    };
                    let from = prompt.to_state();
                    let (to, reason) = match validate_candidate(&candidate, &prompt, opts.wordlist.as_ref()) {
                        Validation::Valid(next) => {
                            let to = Destination::State(next.to_state());
                            prompt = next;
                            (to, None)
                        }
                        Validation::Escape(r) => (Destination::Escape, Some(r.as_str().to_string())),
                    };
                    let event = TransitionEvent {
                        run_id: run_id.clone(),
                        step,
                        from,
                        to,
                        reason,
                        timestamp: opts.clock.map(|c| c()),
                    };
                    if tx.send(Ok(event)).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);
        let mut sink = sink;
        for msg in rx {
            match msg {
                Ok(event) => {
                    if let Some(w) = sink.as_deref_mut() {
                        if write_error.is_none() {
                            if let Err(e) = writeln!(w, "{}", event.to_json_line()).and_then(|_| w.flush()) {
                                write_error = Some(e);
                                stop.store(true, Ordering::Relaxed);
                            }
                        }
                    }
                    events.push(event);
                }
                Err(e) => {
                    stop.store(true, Ordering::Relaxed);
                    failure.get_or_insert(e);
                }
            }
        }
    });

    if let Some(e) = write_error {
        return Err(e.into());
    }
    events.sort_by(|a, b| (&a.run_id, a.step).cmp(&(&b.run_id, b.step)));
    let log = TransitionLog { events };
    match failure {
        Some(HarnessError::RemoteUnreachable { message, .. }) => Err(HarnessError::RemoteUnreachable { message, partial: log }),
        Some(e) => Err(e),
        None => Ok(log),
    }
}
