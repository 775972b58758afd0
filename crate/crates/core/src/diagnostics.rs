//! Potential-density and majority-vote diagnostics.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::CountTable;
use crate::potential::PotentialTable;
use crate::special::{binomial_tail, erfcx};

#[derive(Debug, Error, PartialEq)]
pub enum DiagnosticsError {
    #[error("need at least 2 eligible states, found {0}")]
    TooFewStates(usize),
    #[error("sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("invalid vote config: {0}")]
    BadConfig(String),
    #[error("probability out of range: {0}")]
    BadProbability(f64),
    #[error("vote transform of the reverse kernel is zero at working precision")]
    DivideByZero,
}

impl DiagnosticsError {
    pub fn code(&self) -> &'static str {
        match self {
            DiagnosticsError::TooFewStates(_) => "TOO_FEW_STATES",
            DiagnosticsError::NegativeSigma(_) => "NEGATIVE_SIGMA",
            DiagnosticsError::BadConfig(_) => "BAD_CONFIG",
            DiagnosticsError::BadProbability(_) => "BAD_PROBABILITY",
            DiagnosticsError::DivideByZero => "DIVIDE_BY_ZERO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityFit {
    pub mu: f64,
    pub sigma: f64,
    pub n_states: usize,
    pub min_samples: u64,
}

/// Sample mean and standard deviation (divisor n − 1) of the finite βV of
/// states visited at least `min_samples` times. A visit is one use of the
/// state as a prompt, i.e. its attempt count.
pub fn fit_gaussian_potential_density(
    v: &PotentialTable,
    counts: &CountTable,
    min_samples: u64,
) -> Result<DensityFit, DiagnosticsError> {
    let xs: Vec<f64> = v
        .values
        .iter()
        .filter(|(s, _)| counts.attempts(s) >= min_samples)
        .map(|(_, x)| *x)
        .collect();
    if xs.len() < 2 {
        return Err(DiagnosticsError::TooFewStates(xs.len()));
    }
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(DensityFit { mu, sigma: var.sqrt(), n_states: xs.len(), min_samples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectedAction {
    /// erfcx(σ), normalized so that σ = 0 gives K(0) = 1.
    pub exact: f64,
    /// Large-σ form 1/(σ√π); +∞ at σ = 0.
    pub approx: f64,
}

pub fn expected_min_action(sigma: f64) -> Result<ExpectedAction, DiagnosticsError> {
    if !(sigma >= 0.0) {
        return Err(DiagnosticsError::NegativeSigma(sigma));
    }
    let approx = if sigma == 0.0 { f64::INFINITY } else { 1.0 / (sigma * PI.sqrt()) };
    Ok(ExpectedAction { exact: erfcx(sigma), approx })
}

/// M candidates per step; a state is chosen when it appears at least n times.
///
/// n = M/2 is allowed: the tail is still well defined and it is the n = 5,
/// M = 10 case people usually plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteConfig {
    m: u32,
    n: u32,
}

impl VoteConfig {
    pub fn new(m: u32, n: u32) -> Result<Self, DiagnosticsError> {
        if m == 0 || n == 0 || n > m || 2 * n < m {
            return Err(DiagnosticsError::BadConfig(format!("need M/2 <= n <= M, got M={m}, n={n}")));
        }
        Ok(VoteConfig { m, n })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n(&self) -> u32 {
        self.n
    }
}

/// T' = I_T(n, M − n + 1), the chance that at least n of M candidates agree.
pub fn vote_transform(t: f64, cfg: VoteConfig) -> Result<f64, DiagnosticsError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(DiagnosticsError::BadProbability(t));
    }
    Ok(binomial_tail(t, cfg.m, cfg.n))
}

/// `(T'(f)/T'(g), (T(f)/T(g))^n)`: the exact ratio after voting and its
/// power-law approximation.
pub fn vote_ratio_check(tf: f64, tg: f64, cfg: VoteConfig) -> Result<(f64, f64), DiagnosticsError> {
    for t in [tf, tg] {
        if !(t > 0.0 && t < 1.0) {
            return Err(DiagnosticsError::BadProbability(t));
        }
    }
    let denom = vote_transform(tg, cfg)?;
    if denom == 0.0 {
        return Err(DiagnosticsError::DivideByZero);
    }
    let lhs = vote_transform(tf, cfg)? / denom;
    let rhs = (tf / tg).powi(cfg.n as i32);
    Ok((lhs, rhs))
}

/// JSON body of a density report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub mu: f64,
    pub sigma: f64,
    pub n_states: usize,
    pub expected_action_exact: f64,
    pub expected_action_approx: f64,
}

pub fn density_report(fit: &DensityFit) -> Result<DensityReport, DiagnosticsError> {
    let e = expected_min_action(fit.sigma)?;
    Ok(DensityReport {
        mu: fit.mu,
        sigma: fit.sigma,
        n_states: fit.n_states,
        expected_action_exact: e.exact,
        expected_action_approx: e.approx,
    })
}
