//! Detailed-balance reports: pairwise scatter, triplet loops and one-sided
//! bounds for pairs observed in one direction only.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ledger::{log_ratio_with_error, CountTable, KernelEstimate, KernelPolicy, LedgerError, LogRatio, State};
use crate::potential::PotentialTable;

/// One pair measured in both directions, ordered so that `f < g`.
///
/// Both `delta_beta_v = βV(g) − βV(f)` and `log_ratio = log(T(f←g)/T(g←f))`
/// estimate the same quantity, so detailed balance puts the record on the
/// diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub f: State,
    pub g: State,
    pub delta_beta_v: f64,
    pub log_ratio: f64,
    pub stderr: f64,
}

impl PairRecord {
    /// Deviation from the diagonal in units of the standard error.
    pub fn pull(&self) -> f64 {
        (self.delta_beta_v - self.log_ratio) / self.stderr
    }
}

pub fn pairwise_balance_report(counts: &CountTable, kernel: &KernelEstimate, v: &PotentialTable) -> Vec<PairRecord> {
    let limit = (kernel.total_samples().max(1) as f64).ln();
    let mut pairs = BTreeSet::new();
    for (f, g, _) in counts.transitions() {
        if f != g && counts.count(g, f) > 0 {
            pairs.insert(if f < g { (f, g) } else { (g, f) });
        }
    }
    let mut out = Vec::new();
    for (f, g) in pairs {
        let (Some(vf), Some(vg)) = (v.finite(f), v.finite(g)) else { continue };
        let delta = vg - vf;
        if delta.abs() > limit {
            continue;
        }
        let Ok(LogRatio::Measured { value, stderr }) = log_ratio_with_error(counts, kernel.policy(), f, g) else {
            continue;
        };
        out.push(PairRecord { f: f.clone(), g: g.clone(), delta_beta_v: delta, log_ratio: -value, stderr });
    }
    out
}

/// Ordinary least-squares slope of `delta_beta_v` on `log_ratio`, with an
/// intercept.
pub fn scatter_slope(records: &[PairRecord]) -> Option<f64> {
    if records.len() < 2 {
        return None;
    }
    let n = records.len() as f64;
    let mx = records.iter().map(|r| r.log_ratio).sum::<f64>() / n;
    let my = records.iter().map(|r| r.delta_beta_v).sum::<f64>() / n;
    let sxy: f64 = records.iter().map(|r| (r.log_ratio - mx) * (r.delta_beta_v - my)).sum();
    let sxx: f64 = records.iter().map(|r| (r.log_ratio - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub type Triplet = (State, State, State);

/// Unordered triples whose six directed transitions all have count ≥
/// `min_count`, each emitted once as `(a, b, c)` with a < b < c.
pub fn enumerate_triplets(counts: &CountTable, min_count: u64) -> Vec<Triplet> {
    let min_count = min_count.max(1);
    let mut adj: BTreeMap<&State, BTreeSet<&State>> = BTreeMap::new();
    for (f, g, n) in counts.transitions() {
        if f < g && n >= min_count && counts.count(g, f) >= min_count {
            adj.entry(f).or_default().insert(g);
            adj.entry(g).or_default().insert(f);
        }
    }
    let mut out = Vec::new();
    for (&a, na) in &adj {
        for &b in na.range::<&State, _>((std::ops::Bound::Excluded(a), std::ops::Bound::Unbounded)) {
            for &c in adj[b].range::<&State, _>((std::ops::Bound::Excluded(b), std::ops::Bound::Unbounded)) {
                if na.contains(c) {
                    out.push((a.clone(), b.clone(), c.clone()));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub states: Triplet,
    /// Σ log T around a → b → c → a.
    pub forward_sum: f64,
    /// Σ log T around a → c → b → a.
    pub reverse_sum: f64,
    pub stderr: f64,
}

impl TripletRecord {
    pub fn difference(&self) -> f64 {
        self.forward_sum - self.reverse_sum
    }
}

pub fn loop_sum(triplet: &Triplet, counts: &CountTable, policy: KernelPolicy) -> Result<TripletRecord, LedgerError> {
    let policy = policy.validate()?;
    let (a, b, c) = triplet;
    let lt = |from: &State, to: &State| policy.raw_prob(counts, from, to).ln();
    let forward_sum = lt(a, b) + lt(b, c) + lt(c, a);
    let reverse_sum = lt(a, c) + lt(c, b) + lt(b, a);
    let stderr = [(a, b), (b, c), (c, a), (a, c), (c, b), (b, a)]
        .iter()
        .map(|(x, y)| 1.0 / counts.count(x, y) as f64)
        .sum::<f64>()
        .sqrt();
    Ok(TripletRecord { states: triplet.clone(), forward_sum, reverse_sum, stderr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub f: State,
    pub g: State,
    /// βV(f) − βV(g).
    pub delta_beta_v: f64,
    /// log[(1/N(f)) / (N(f←g)/N(g))].
    pub bound_log: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundBucket {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub p90_delta_beta_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub n_pairs: usize,
    pub fraction_satisfied: f64,
    pub buckets: Vec<BoundBucket>,
}

/// Pairs with g → f observed but f → g never observed, and both potentials
/// finite. A pair is satisfied when βV(f) − βV(g) ≥ bound_log. `N(·)` is the
/// total outgoing count, self-loops excluded.
pub fn one_sided_bound_report(counts: &CountTable, v: &PotentialTable) -> (Vec<BoundRecord>, BoundSummary) {
    let n_out = |s: &State| (counts.outgoing(s) - counts.count(s, s)) as f64;
    let mut records = Vec::new();
    for (g, f, n_fg) in counts.transitions() {
        if f == g || counts.count(f, g) > 0 {
            continue;
        }
        let (Some(vf), Some(vg)) = (v.finite(f), v.finite(g)) else { continue };
        let nf = n_out(f);
        if nf == 0.0 {
            // f never moves, so "f → g unobserved" carries no information
            continue;
        }
        let bound_log = ((1.0 / nf) / (n_fg as f64 / n_out(g))).ln();
        let delta = vf - vg;
        records.push(BoundRecord { f: f.clone(), g: g.clone(), delta_beta_v: delta, bound_log, satisfied: delta >= bound_log });
    }
    records.sort_by(|x, y| (&x.f, &x.g).cmp(&(&y.f, &y.g)));
    let summary = summarize_bounds(&records);
    (records, summary)
}

fn summarize_bounds(records: &[BoundRecord]) -> BoundSummary {
    let mut buckets: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in records {
        buckets.entry(r.bound_log.floor() as i64).or_default().push(r.delta_beta_v);
    }
    let satisfied = records.iter().filter(|r| r.satisfied).count();
    BoundSummary {
        n_pairs: records.len(),
        fraction_satisfied: if records.is_empty() { 0.0 } else { satisfied as f64 / records.len() as f64 },
        buckets: buckets
            .into_iter()
            .map(|(lo, mut xs)| BoundBucket {
                lo: lo as f64,
                hi: lo as f64 + 1.0,
                n: xs.len(),
                p90_delta_beta_v: percentile(&mut xs, 0.9),
            })
            .collect(),
    }
}

/// Percentile with linear interpolation between closest ranks; sorts `xs`.
pub fn percentile(xs: &mut [f64], p: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

pub fn write_pairs_csv<W: Write>(out: W, records: &[PairRecord], fmt: impl Fn(f64) -> String) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["f", "g", "delta_beta_v", "log_ratio", "stderr"])?;
    for r in records {
        w.write_record([r.f.as_str(), r.g.as_str(), &fmt(r.delta_beta_v), &fmt(r.log_ratio), &fmt(r.stderr)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_triplets_csv<W: Write>(out: W, records: &[TripletRecord], fmt: impl Fn(f64) -> String) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["f", "g", "h", "forward", "reverse", "stderr"])?;
    for r in records {
        let (a, b, c) = &r.states;
        w.write_record([a.as_str(), b.as_str(), c.as_str(), &fmt(r.forward_sum), &fmt(r.reverse_sum), &fmt(r.stderr)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounds_csv<W: Write>(out: W, records: &[BoundRecord], fmt: impl Fn(f64) -> String) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["f", "g", "delta_beta_v", "bound_log", "satisfied"])?;
    for r in records {
        let sat = if r.satisfied { "true" } else { "false" };
        w.write_record([r.f.as_str(), r.g.as_str(), &fmt(r.delta_beta_v), &fmt(r.bound_log), sat])?;
    }
    w.flush()?;
    Ok(())
}
