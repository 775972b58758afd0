mod config;
mod output;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use balance_lab::diagnostics::{
    density_report, expected_min_action, fit_gaussian_potential_density, vote_ratio_check, vote_transform,
    DiagnosticsError, VoteConfig,
};
use balance_lab::harness::{run_sampling, GeneratorBinding, HarnessError, RemoteConfig, SamplingOptions, WordState};
use balance_lab::scorer::{directionality_report, score, ScorerError, ScorerParams};
use balance_lab::verify::{
    enumerate_triplets, loop_sum, one_sided_bound_report, pairwise_balance_report, scatter_slope, write_bounds_csv,
    write_pairs_csv, write_triplets_csv, TripletRecord,
};
use balance_lab::{
    count_transitions, estimate_kernel, fit_potential, parse_transition_log, solve_extreme_or_fit, ActionError,
    CountTable, KernelEstimate, LedgerError, PotentialAssignment, PotentialError, PotentialTable, SolverError,
};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::config::{RunConfig, Settings};
use crate::output::{to_stdout, write_atomic, Precision};

#[derive(Parser)]
#[command(name = "balance-lab", version, about = "Detailed-balance analysis of agent transition logs")]
struct Cli {
    /// Config file; defaults to ./balance-lab.json when it exists
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print floats with full round-trip precision instead of 6 significant digits
    #[arg(long, global = true)]
    full_precision: bool,
    /// Leave out timestamps so repeated runs produce identical files
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count transitions in a JSONL log
    Ingest {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write rejected lines here as JSONL
        #[arg(long)]
        rejected: Option<PathBuf>,
    },
    /// Estimate the transition kernel from counts
    Estimate {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the potential that minimizes the action
    Fit {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write fit diagnostics (action, gradient norm, iterations) as JSON
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Use the closed form when the kernel allows it
        #[arg(long)]
        analytic: bool,
    },
    /// Pairwise log-ratio against potential difference
    VerifyPairs {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        potentials: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Closed-loop sums over measured triplets
    VerifyLoops {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// One-sided bounds for pairs seen in a single direction
    VerifyBounds {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        potentials: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Gaussian fit of the potential density and the implied action
    Density {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        potentials: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Expected minimum action for a Gaussian potential density
    ExpectedAction {
        #[arg(long)]
        sigma: f64,
    },
    /// Majority-vote kernel transform
    Vote {
        /// Kernel value to transform
        #[arg(long)]
        t: f64,
        /// Candidates per step
        #[arg(long)]
        m: u32,
        /// Votes needed to accept
        #[arg(long)]
        n: u32,
        /// Reverse kernel value; adds the ratio check
        #[arg(long)]
        tg: Option<f64>,
    },
    /// Run the word agent and write a transition log
    SimulateWords {
        #[arg(long)]
        seed_word: String,
        #[arg(long)]
        n_samples: usize,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        /// Potential CSV driving a scripted Metropolis generator
        #[arg(long, conflicts_with = "endpoint", required_unless_present = "endpoint")]
        potentials: Option<PathBuf>,
        /// HTTP endpoint of a remote generator
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long, default_value = "default")]
        model: String,
        #[arg(long)]
        wordlist: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        run_prefix: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score expressions, or classify a kernel's transitions by score
    #[command(group = clap::ArgGroup::new("source").required(true).args(["input", "counts"]))]
    ScoreExpressions {
        /// One expression per line
        #[arg(long)]
        input: Option<PathBuf>,
        /// Counts whose kernel transitions are classified up, down or flat
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Only transitions with T above this take part
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Scorer parameters as JSON; missing keys use the defaults
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// estimate → fit → verify-* → density into one directory
    #[command(group = clap::ArgGroup::new("source").required(true).args(["log", "counts"]))]
    Report {
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Estimate { .. } => "estimate",
            Command::Fit { .. } => "fit",
            Command::VerifyPairs { .. } => "verify-pairs",
            Command::VerifyLoops { .. } => "verify-loops",
            Command::VerifyBounds { .. } => "verify-bounds",
            Command::Density { .. } => "density",
            Command::ExpectedAction { .. } => "expected-action",
            Command::Vote { .. } => "vote",
            Command::SimulateWords { .. } => "simulate-words",
            Command::ScoreExpressions { .. } => "score-expressions",
            Command::Report { .. } => "report",
        }
    }

    fn inputs(&self) -> Vec<(&'static str, &Path)> {
        let mut v: Vec<(&'static str, Option<&PathBuf>)> = Vec::new();
        match self {
            Command::Ingest { log, .. } => v.push(("log", Some(log))),
            Command::Estimate { counts, .. } | Command::Fit { counts, .. } | Command::VerifyLoops { counts, .. } => {
                v.push(("counts", Some(counts)))
            }
            Command::VerifyPairs { counts, potentials, .. }
            | Command::VerifyBounds { counts, potentials, .. }
            | Command::Density { counts, potentials, .. } => {
                v.push(("counts", Some(counts)));
                v.push(("potentials", Some(potentials)));
            }
            Command::SimulateWords { potentials, wordlist, .. } => {
                v.push(("potentials", potentials.as_ref()));
                v.push(("wordlist", wordlist.as_ref()));
            }
            Command::ScoreExpressions { input, counts, params, .. } => {
                v.push(("input", input.as_ref()));
                v.push(("counts", counts.as_ref()));
                v.push(("params", params.as_ref()));
            }
            Command::Report { log, counts, .. } => {
                v.push(("log", log.as_ref()));
                v.push(("counts", counts.as_ref()));
            }
            Command::ExpectedAction { .. } | Command::Vote { .. } => {}
        }
        v.into_iter().filter_map(|(k, p)| p.map(|p| (k, p.as_path()))).collect()
    }
}

/// An error with an explicit machine-readable code.
#[derive(Debug)]
struct Coded {
    code: &'static str,
    message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub(crate) fn coded(code: &'static str, message: impl Into<String>) -> anyhow::Error {
    Coded { code, message: message.into() }.into()
}

fn error_code(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Coded>() {
            return e.code;
        }
        if let Some(e) = cause.downcast_ref::<LedgerError>() {
            return e.code();
        }
        if let Some(e) = cause.downcast_ref::<SolverError>() {
            return e.code();
        }
        if let Some(e) = cause.downcast_ref::<ActionError>() {
            return e.code();
        }
        if let Some(e) = cause.downcast_ref::<DiagnosticsError>() {
            return e.code();
        }
        if let Some(e) = cause.downcast_ref::<HarnessError>() {
            return e.code();
        }
        if let Some(e) = cause.downcast_ref::<ScorerError>() {
            return e.code();
        }
        if cause.downcast_ref::<PotentialError>().is_some() {
            return "BAD_POTENTIALS";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "IO";
        }
    }
    "ERROR"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = json!({ "error": { "code": error_code(&e), "message": format!("{e:#}") } });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    precision: Precision,
    deterministic: bool,
    out_dirs: BTreeSet<PathBuf>,
}

impl Ctx {
    fn note_output(&mut self, key: &str, path: &Path) {
        self.cfg.paths.insert(key.to_string(), path.to_path_buf());
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        self.out_dirs.insert(dir);
    }

    /// Sends output to `path` atomically, or to stdout when there is none.
    fn emit(&mut self, key: &str, path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        match path {
            Some(p) => {
                self.note_output(key, p);
                write_atomic(p, f)
            }
            None => to_stdout(f),
        }
    }

    fn emit_json<T: Serialize>(&mut self, key: &str, path: Option<&Path>, value: &T) -> Result<()> {
        let v = self.precision.json(serde_json::to_value(value)?);
        self.emit(key, path, |w| {
            serde_json::to_writer_pretty(&mut *w, &v)?;
            writeln!(w)?;
            Ok(())
        })
    }

    fn finish(mut self) -> Result<()> {
        if !self.deterministic {
            self.cfg.generated_at = Some(now());
        }
        let v = self.precision.json(serde_json::to_value(&self.cfg)?);
        for dir in &self.out_dirs {
            write_atomic(&dir.join("config.resolved.json"), |w| {
                serde_json::to_writer_pretty(&mut *w, &v)?;
                writeln!(w)?;
                Ok(())
            })?;
        }
        Ok(())
    }
}

fn now() -> String {
    time::OffsetDateTime::now_utc()
        .format(&time::format_description::well_known::Rfc3339)
        .unwrap_or_default()
}

fn run(cli: Cli) -> Result<()> {
    let name = cli.command.name();
    let mut cfg = RunConfig::resolve(cli.settings, cli.config.as_deref(), name)?;
    for (key, path) in cli.command.inputs() {
        if !path.exists() {
            return Err(coded("MISSING_INPUT", format!("{key} file {} does not exist", path.display())));
        }
        cfg.paths.insert(key.to_string(), path.to_path_buf());
    }
    let mut ctx =
        Ctx { cfg, precision: Precision { full: cli.full_precision }, deterministic: cli.deterministic, out_dirs: BTreeSet::new() };

    match cli.command {
        Command::Ingest { log, out, rejected } => ingest(&mut ctx, &log, out.as_deref(), rejected.as_deref())?,
        Command::Estimate { counts, out } => {
            let counts = read_counts(&counts)?;
            let kernel = estimate(&ctx, &counts)?;
            write_kernel(&mut ctx, &kernel, out.as_deref())?;
        }
        Command::Fit { counts, out, summary, analytic } => {
            let counts = read_counts(&counts)?;
            let kernel = estimate(&ctx, &counts)?;
            let (fit, stalled) = split_partial(fit(&ctx, &kernel, analytic))?;
            write_potentials(&mut ctx, &fit.table, &counts, out.as_deref())?;
            if let Some(path) = summary {
                ctx.emit_json("summary", Some(&path), &fit_summary(&fit))?;
            }
            // a partial fit is still written, then reported as a failure
            if let Some(e) = stalled {
                ctx.finish()?;
                return Err(e.into());
            }
        }
        Command::VerifyPairs { counts, potentials, out, summary } => {
            let counts = read_counts(&counts)?;
            let v = read_potentials(&potentials)?;
            let kernel = estimate(&ctx, &counts)?;
            let s = verify_pairs(&mut ctx, &counts, &kernel, &v, out.as_deref())?;
            if let Some(path) = summary {
                ctx.emit_json("summary", Some(&path), &s)?;
            }
        }
        Command::VerifyLoops { counts, out, summary } => {
            let counts = read_counts(&counts)?;
            let s = verify_loops(&mut ctx, &counts, out.as_deref())?;
            if let Some(path) = summary {
                ctx.emit_json("summary", Some(&path), &s)?;
            }
        }
        Command::VerifyBounds { counts, potentials, out, summary } => {
            let counts = read_counts(&counts)?;
            let v = read_potentials(&potentials)?;
            let s = verify_bounds(&mut ctx, &counts, &v, out.as_deref())?;
            if let Some(path) = summary {
                ctx.emit_json("summary", Some(&path), &s)?;
            }
        }
        Command::Density { counts, potentials, out } => {
            let counts = read_counts(&counts)?;
            let v = read_potentials(&potentials)?;
            let fit = fit_gaussian_potential_density(&v, &counts, ctx.cfg.min_samples)?;
            ctx.emit_json("density", out.as_deref(), &density_report(&fit)?)?;
        }
        Command::ExpectedAction { sigma } => {
            let e = expected_min_action(sigma)?;
            ctx.emit_json("expected_action", None, &json!({ "sigma": sigma, "exact": e.exact, "approx": e.approx }))?;
        }
        Command::Vote { t, m, n, tg } => {
            let cfg = VoteConfig::new(m, n)?;
            let mut body = json!({ "m": m, "n": n, "t": t, "transformed": vote_transform(t, cfg)? });
            if let Some(tg) = tg {
                let (lhs, rhs) = vote_ratio_check(t, tg, cfg)?;
                body["tg"] = json!(tg);
                body["ratio_exact"] = json!(lhs);
                body["ratio_power_law"] = json!(rhs);
            }
            ctx.emit_json("vote", None, &body)?;
        }
        Command::SimulateWords { seed_word, n_samples, concurrency, potentials, endpoint, model, wordlist, run_prefix, out } => {
            let seed_word = WordState::new(&seed_word).map_err(|e| coded("INVALID_SEED_WORD", e.to_string()))?;
            let binding = match (endpoint, potentials) {
                (Some(url), _) => GeneratorBinding::RemoteHttp(RemoteConfig::new(&url, &model)),
                (None, Some(p)) => scripted_binding(&read_potentials(&p)?, ctx.cfg.seed)?,
                (None, None) => unreachable!("clap requires one of --endpoint and --potentials"),
            };
            let mut opts = SamplingOptions::new(&run_prefix);
            if let Some(path) = wordlist {
                opts.wordlist = Some(balance_lab::harness::read_wordlist(&fs::read_to_string(path)?));
            }
            if !ctx.deterministic {
                opts.clock = Some(now);
            }
            simulate(&mut ctx, &binding, &seed_word, n_samples, concurrency, &opts, out.as_deref())?;
        }
        Command::ScoreExpressions { input, counts, threshold, params, out } => {
            let params = match params {
                Some(p) => ScorerParams::from_json(&fs::read_to_string(p)?)?,
                None => ScorerParams::default(),
            };
            match (input, counts) {
                (Some(input), _) => score_file(&mut ctx, &input, &params, out.as_deref())?,
                (None, Some(counts)) => {
                    let kernel = estimate(&ctx, &read_counts(&counts)?)?;
                    let report = directionality_report(&kernel, &params, threshold);
                    ctx.emit_json("directionality", out.as_deref(), &report)?;
                }
                (None, None) => unreachable!("clap requires --input or --counts"),
            }
        }
        Command::Report { log, counts, out_dir } => report(&mut ctx, log.as_deref(), counts.as_deref(), &out_dir)?,
    }
    ctx.finish()
}

fn read_counts(path: &Path) -> Result<CountTable> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    CountTable::read_csv(BufReader::new(f)).with_context(|| format!("reading counts {}", path.display()))
}

fn read_potentials(path: &Path) -> Result<PotentialTable> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    PotentialTable::read_csv(BufReader::new(f)).with_context(|| format!("reading potentials {}", path.display()))
}

fn estimate(ctx: &Ctx, counts: &CountTable) -> Result<KernelEstimate> {
    Ok(estimate_kernel(counts, ctx.cfg.policy()?)?)
}

fn fit(ctx: &Ctx, kernel: &KernelEstimate, analytic: bool) -> Result<PotentialAssignment, SolverError> {
    let opts = ctx.cfg.fit_options().map_err(|e| SolverError::BadOptions(e.to_string()))?;
    let spec = ctx.cfg.kernel_spec().map_err(|e| SolverError::BadOptions(e.to_string()))?;
    if analytic {
        solve_extreme_or_fit(kernel, &spec, &opts)
    } else {
        fit_potential(kernel, &spec, &opts)
    }
}

/// Pulls the partial assignment out of a `NoConvergence` error so it can
/// still be written.
fn split_partial(
    result: Result<PotentialAssignment, SolverError>,
) -> Result<(PotentialAssignment, Option<SolverError>)> {
    match result {
        Ok(f) => Ok((f, None)),
        Err(SolverError::NoConvergence { partial }) => {
            let fit = (*partial).clone();
            Ok((fit, Some(SolverError::NoConvergence { partial })))
        }
        Err(e) => Err(e.into()),
    }
}

fn fit_summary(fit: &PotentialAssignment) -> serde_json::Value {
    json!({
        "fit_action": fit.fit_action,
        "grad_norm": fit.grad_norm,
        "cap": fit.cap,
        "converged": fit.converged,
        "iterations": fit.iterations,
        "gauge": fit.gauge,
        "n_finite": fit.table.values.len(),
        "divergent_high": fit.table.divergent_high,
    })
}

fn ingest(ctx: &mut Ctx, log: &Path, out: Option<&Path>, rejected: Option<&Path>) -> Result<()> {
    let parsed = parse_transition_log(BufReader::new(File::open(log)?))?;
    for r in &parsed.rejected {
        eprintln!("warning: {}:{}: {} ({})", log.display(), r.line, r.message, r.kind.code());
    }
    if let Some(path) = rejected {
        let lines: Vec<_> =
            parsed.rejected.iter().map(|r| json!({ "line": r.line, "code": r.kind.code(), "message": r.message })).collect();
        ctx.emit("rejected", Some(path), |w| {
            for l in &lines {
                writeln!(w, "{l}")?;
            }
            Ok(())
        })?;
    }
    let counts = count_transitions(&parsed.log)?;
    ctx.emit("counts", out, |w| Ok(counts.write_csv(w)?))
}

fn write_kernel(ctx: &mut Ctx, kernel: &KernelEstimate, out: Option<&Path>) -> Result<()> {
    let p = ctx.precision;
    ctx.emit("kernel", out, |w| Ok(kernel.write_csv(w, |x| p.real(x))?))
}

fn write_potentials(ctx: &mut Ctx, v: &PotentialTable, counts: &CountTable, out: Option<&Path>) -> Result<()> {
    let p = ctx.precision;
    ctx.emit("potentials", out, |w| Ok(v.write_csv(w, counts, |x| p.real(x))?))
}

#[derive(Serialize)]
struct PairSummary {
    n_pairs: usize,
    slope: Option<f64>,
    fraction_within_3_stderr: f64,
}

fn verify_pairs(
    ctx: &mut Ctx,
    counts: &CountTable,
    kernel: &KernelEstimate,
    v: &PotentialTable,
    out: Option<&Path>,
) -> Result<PairSummary> {
    let records = pairwise_balance_report(counts, kernel, v);
    let p = ctx.precision;
    ctx.emit("pairs", out, |w| Ok(write_pairs_csv(w, &records, |x| p.real(x))?))?;
    let within = records.iter().filter(|r| r.pull().abs() < 3.0).count();
    Ok(PairSummary {
        n_pairs: records.len(),
        slope: scatter_slope(&records),
        fraction_within_3_stderr: if records.is_empty() { 0.0 } else { within as f64 / records.len() as f64 },
    })
}

#[derive(Serialize)]
struct LoopSummary {
    n_triplets: usize,
    min_count: u64,
    fraction_within_3_stderr: f64,
}

fn verify_loops(ctx: &mut Ctx, counts: &CountTable, out: Option<&Path>) -> Result<LoopSummary> {
    let policy = ctx.cfg.policy()?;
    let records: Vec<TripletRecord> = enumerate_triplets(counts, ctx.cfg.triplet_min_count)
        .iter()
        .map(|t| loop_sum(t, counts, policy))
        .collect::<Result<_, _>>()?;
    let p = ctx.precision;
    ctx.emit("triplets", out, |w| Ok(write_triplets_csv(w, &records, |x| p.real(x))?))?;
    let closed = records.iter().filter(|r| r.difference().abs() < 3.0 * r.stderr).count();
    Ok(LoopSummary {
        n_triplets: records.len(),
        min_count: ctx.cfg.triplet_min_count,
        fraction_within_3_stderr: if records.is_empty() { 0.0 } else { closed as f64 / records.len() as f64 },
    })
}

fn verify_bounds(
    ctx: &mut Ctx,
    counts: &CountTable,
    v: &PotentialTable,
    out: Option<&Path>,
) -> Result<balance_lab::verify::BoundSummary> {
    let (records, summary) = one_sided_bound_report(counts, v);
    let p = ctx.precision;
    ctx.emit("bounds", out, |w| Ok(write_bounds_csv(w, &records, |x| p.real(x))?))?;
    Ok(summary)
}

fn scripted_binding(v: &PotentialTable, seed: u64) -> Result<GeneratorBinding> {
    if !v.divergent_high.is_empty() {
        return Err(coded("BAD_BINDING", "scripted potentials must all be finite"));
    }
    let potentials: BTreeMap<WordState, f64> = v
        .values
        .iter()
        .map(|(s, x)| Ok((WordState::new(s.as_str())?, *x)))
        .collect::<Result<_, HarnessError>>()?;
    let proposals = potentials.keys().cloned().collect();
    Ok(GeneratorBinding::ScriptedMetropolis { potentials, proposals, seed })
}

fn simulate(
    ctx: &mut Ctx,
    binding: &GeneratorBinding,
    seed_word: &WordState,
    n_samples: usize,
    concurrency: usize,
    opts: &SamplingOptions,
    out: Option<&Path>,
) -> Result<()> {
    let mut failure = None;
    ctx.emit("log", out, |w| {
        match run_sampling(binding, seed_word, n_samples, concurrency, opts, Some(w)) {
            Ok(_) => {}
            // keep what was logged, then report
            Err(e @ HarnessError::RemoteUnreachable { .. }) => failure = Some(e),
            Err(e) => return Err(e.into()),
        }
        Ok(())
    })?;
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn score_file(ctx: &mut Ctx, input: &Path, params: &ScorerParams, out: Option<&Path>) -> Result<()> {
    let reader = BufReader::new(File::open(input)?);
    let mut lines = Vec::new();
    for line in reader.lines() {
        let expr = line?;
        let s = score(&expr, params);
        lines.push(ctx.precision.json(json!({ "expr": expr, "score": s })));
    }
    ctx.emit("scores", out, |w| {
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })
}

fn report(ctx: &mut Ctx, log: Option<&Path>, counts_path: Option<&Path>, dir: &Path) -> Result<()> {
    let counts = match (log, counts_path) {
        (Some(log), _) => {
            ingest(ctx, log, Some(&dir.join("counts.csv")), Some(&dir.join("rejected.jsonl")))?;
            read_counts(&dir.join("counts.csv"))?
        }
        (None, Some(p)) => read_counts(p)?,
        (None, None) => unreachable!("clap requires --log or --counts"),
    };
    let kernel = estimate(ctx, &counts)?;
    write_kernel(ctx, &kernel, Some(&dir.join("kernel.csv")))?;

    let (fit, stalled) = split_partial(fit(ctx, &kernel, false))?;
    if let Some(e) = stalled {
        eprintln!("warning: {e}; continuing with the partial result");
    }
    write_potentials(ctx, &fit.table, &counts, Some(&dir.join("potentials.csv")))?;

    let pairs = verify_pairs(ctx, &counts, &kernel, &fit.table, Some(&dir.join("pairs.csv")))?;
    let loops = verify_loops(ctx, &counts, Some(&dir.join("triplets.csv")))?;
    let bounds = verify_bounds(ctx, &counts, &fit.table, Some(&dir.join("bounds.csv")))?;
    let density = match fit_gaussian_potential_density(&fit.table, &counts, ctx.cfg.min_samples) {
        Ok(d) => serde_json::to_value(density_report(&d)?)?,
        Err(e) => json!({ "skipped": { "code": e.code(), "message": e.to_string() } }),
    };
    ctx.emit_json("density", Some(&dir.join("density.json")), &density)?;
    let summary = json!({
        "fit": fit_summary(&fit),
        "pairs": pairs,
        "loops": loops,
        "bounds": bounds,
        "density": density,
    });
    ctx.emit_json("summary", Some(&dir.join("summary.json")), &summary)
}
