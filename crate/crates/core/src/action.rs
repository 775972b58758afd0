//! The violation kernel K, the discrete action and its gradient.
//!
//! The action of a potential V over a kernel T is
//!
//! ```text
//! S = (1/D) Σ_{f→g} T(g←f) K(V(f) − V(g))
//! ```
//!
//! and its gradient vanishes exactly at the equilibrium condition. Rows are
//! summed as `Σ weight·K / norm`, so a normalized row with constant V yields
//! exactly K(0).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{KernelEstimate, State};
use crate::potential::PotentialTable;

#[derive(Debug, Error, PartialEq)]
pub enum ActionError {
    #[error("no potential for state {0:?}")]
    MissingPotential(String),
    #[error("kernel has no transitions")]
    EmptyKernel,
    #[error("beta must be positive and finite, got {0}")]
    BadBeta(f64),
}

impl ActionError {
    pub fn code(&self) -> &'static str {
        match self {
            ActionError::MissingPotential(_) => "MISSING_POTENTIAL",
            ActionError::EmptyKernel => "EMPTY_KERNEL",
            ActionError::BadBeta(_) => "BAD_BETA",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// K(x) = exp(−βx/2)
    ExpHalf,
    /// K(x) = log(1 + exp(−βx))
    Softplus,
}

/// A convex violation penalty with its derivative.
pub trait ViolationKernel {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    fn beta(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationKernelSpec {
    pub kind: KernelKind,
    pub beta: f64,
}

impl Default for ViolationKernelSpec {
    fn default() -> Self {
        ViolationKernelSpec { kind: KernelKind::ExpHalf, beta: 1.0 }
    }
}

impl ViolationKernelSpec {
    pub fn new(kind: KernelKind, beta: f64) -> Result<Self, ActionError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(ActionError::BadBeta(beta));
        }
        Ok(ViolationKernelSpec { kind, beta })
    }

    pub fn exp_half() -> Self {
        Self::default()
    }

    pub fn softplus() -> Self {
        ViolationKernelSpec { kind: KernelKind::Softplus, beta: 1.0 }
    }
}

// log(1 + e^{-y}) without overflow for either sign of y.
fn softplus_neg(y: f64) -> f64 {
    if y > 0.0 {
        (-y).exp().ln_1p()
    } else {
        -y + y.exp().ln_1p()
    }
}

// 1 / (1 + e^{y})
fn logistic_neg(y: f64) -> f64 {
    if y > 0.0 {
        let e = (-y).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + y.exp())
    }
}

impl ViolationKernel for ViolationKernelSpec {
    fn value(&self, x: f64) -> f64 {
        match self.kind {
            KernelKind::ExpHalf => (-0.5 * self.beta * x).exp(),
            KernelKind::Softplus => softplus_neg(self.beta * x),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self.kind {
            KernelKind::ExpHalf => -0.5 * self.beta * (-0.5 * self.beta * x).exp(),
            KernelKind::Softplus => -self.beta * logistic_neg(self.beta * x),
        }
    }

    fn beta(&self) -> f64 {
        self.beta
    }
}

pub fn eval_k(spec: &ViolationKernelSpec, x: f64) -> f64 {
    spec.value(x)
}

/// K′(x) − K′(−x)·e^{−βx}. Zero for any K under which detailed balance
/// implies stationarity of the action.
pub fn k_condition_check<K: ViolationKernel + ?Sized>(k: &K, x: f64) -> f64 {
    k.derivative(x) - k.derivative(-x) * (-k.beta() * x).exp()
}

/// What the action sum is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denominator {
    /// Rows that carry kernel mass.
    #[default]
    RowsWithKernel,
    /// Every distinct state in the kernel.
    AllStates,
}

impl Denominator {
    pub fn divisor(self, kernel: &KernelEstimate) -> usize {
        match self {
            Denominator::RowsWithKernel => kernel.rows_with_mass(),
            Denominator::AllStates => kernel.states().len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub value: f64,
    pub denominator: Denominator,
    pub divisor: usize,
    pub n_terms: usize,
}

// Difference V(f) − V(g) with divergent states at +∞. `None` when both are
// divergent: their relative potential is not resolved and the term is dropped.
#[inline]
fn difference(vf: f64, vg: f64) -> Option<f64> {
    if vf == f64::INFINITY && vg == f64::INFINITY {
        None
    } else {
        Some(vf - vg)
    }
}

#[inline]
fn k_at<K: ViolationKernel + ?Sized>(k: &K, x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else {
        k.value(x)
    }
}

#[inline]
fn dk_at<K: ViolationKernel + ?Sized>(k: &K, x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else {
        k.derivative(x)
    }
}

/// Undivided action sum over kernel indices. `v[i]` is +∞ for divergent
/// states. Returns the sum and the number of terms.
pub fn action_sum_indexed<K: ViolationKernel + ?Sized>(kernel: &KernelEstimate, v: &[f64], k: &K) -> (f64, usize) {
    let mut total = 0.0;
    let mut n_terms = 0;
    for row in kernel.rows() {
        if row.entries.is_empty() {
            continue;
        }
        let vf = v[row.from];
        let mut acc = 0.0;
        for e in &row.entries {
            if let Some(x) = difference(vf, v[e.to]) {
                acc += e.weight * k_at(k, x);
                n_terms += 1;
            }
        }
        total += acc / row.norm;
    }
    (total, n_terms)
}

/// Undivided gradient over kernel indices, written into `grad`.
pub fn gradient_indexed<K: ViolationKernel + ?Sized>(kernel: &KernelEstimate, v: &[f64], k: &K, grad: &mut [f64]) {
    grad.iter_mut().for_each(|g| *g = 0.0);
    for row in kernel.rows() {
        let f = row.from;
        for e in &row.entries {
            if let Some(x) = difference(v[f], v[e.to]) {
                let t = e.weight / row.norm;
                let d = t * dk_at(k, x);
                grad[f] += d;
                grad[e.to] -= d;
            }
        }
    }
}

// Dense potential vector for the states of `kernel` that take part in a term.
fn dense_potentials(kernel: &KernelEstimate, potentials: &PotentialTable) -> Result<Vec<f64>, ActionError> {
    let states = kernel.states();
    let mut v = vec![f64::NAN; states.len()];
    let mut needed = vec![false; states.len()];
    for row in kernel.rows() {
        if !row.entries.is_empty() {
            needed[row.from] = true;
            for e in &row.entries {
                needed[e.to] = true;
            }
        }
    }
    for (i, s) in states.iter().enumerate() {
        if !needed[i] {
            continue;
        }
        v[i] = match potentials.get(s) {
            Some(p) => p.as_f64(),
            None => return Err(ActionError::MissingPotential(s.to_string())),
        };
    }
    Ok(v)
}

/// Evaluates the action of `potentials` over `kernel`.
pub fn action<K: ViolationKernel + ?Sized>(
    kernel: &KernelEstimate,
    potentials: &PotentialTable,
    k: &K,
    denominator: Denominator,
) -> Result<ActionValue, ActionError> {
    if kernel.is_empty() {
        return Err(ActionError::EmptyKernel);
    }
    let v = dense_potentials(kernel, potentials)?;
    let (sum, n_terms) = action_sum_indexed(kernel, &v, k);
    let divisor = denominator.divisor(kernel);
    Ok(ActionValue { value: sum / divisor as f64, denominator, divisor, n_terms })
}

/// ∂S/∂V(f) for every finite state that takes part in a term. An empty kernel
/// yields an empty gradient.
pub fn action_gradient<K: ViolationKernel + ?Sized>(
    kernel: &KernelEstimate,
    potentials: &PotentialTable,
    k: &K,
    denominator: Denominator,
) -> Result<Vec<(State, f64)>, ActionError> {
    if kernel.is_empty() {
        return Ok(Vec::new());
    }
    let v = dense_potentials(kernel, potentials)?;
    let mut grad = vec![0.0; v.len()];
    gradient_indexed(kernel, &v, k, &mut grad);
    let divisor = denominator.divisor(kernel) as f64;
    Ok(kernel
        .states()
        .iter()
        .enumerate()
        .filter(|(i, _)| v[*i].is_finite())
        .map(|(i, s)| (s.clone(), grad[i] / divisor))
        .collect())
}
