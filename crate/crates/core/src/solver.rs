//! Least-action potential fitting.
//!
//! [`fit_potential`] minimizes the action by projected gradient descent with
//! a backtracking (Armijo) line search inside the box |βV − βV(anchor)| ≤ cap.
//! A state pinned at the upper bound whose gradient still points outward and
//! which receives no flow from a finite state has no finite minimizer; it is
//! moved to the divergent set and the descent is restarted without it.
//!
//! [`solve_extreme_analytic`] handles near-deterministic agents whose measured
//! pairs form a forest: each finite state follows from pairwise balance
//! along the tree, and states that only leak flow are divergent.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{action_sum_indexed, gradient_indexed, ActionError, Denominator, ViolationKernel, ViolationKernelSpec};
use crate::ledger::{KernelEstimate, State};
use crate::potential::PotentialTable;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("kernel has no transitions")]
    EmptyKernel,
    #[error("no convergence after {} iterations (gradient norm {:e})", .partial.iterations, .partial.grad_norm)]
    NoConvergence { partial: Box<PotentialAssignment> },
    #[error("transition graph is not tree-reducible: {0}")]
    NotTreeReducible(String),
    #[error("anchor state {0:?} takes part in no transition")]
    UnknownAnchor(String),
    #[error("invalid fit options: {0}")]
    BadOptions(String),
    #[error(transparent)]
    Action(#[from] ActionError),
}

impl SolverError {
    pub fn code(&self) -> &'static str {
        match self {
            SolverError::EmptyKernel => "EMPTY_KERNEL",
            SolverError::NoConvergence { .. } => "NO_CONVERGENCE",
            SolverError::NotTreeReducible(_) => "NOT_TREE_REDUCIBLE",
            SolverError::UnknownAnchor(_) => "UNKNOWN_ANCHOR",
            SolverError::BadOptions(_) => "BAD_OPTIONS",
            SolverError::Action(e) => e.code(),
        }
    }
}

/// Gauge of a returned assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    Anchor(State),
    MeanZero,
}

/// Requested gauge for a fit.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeChoice {
    /// Anchor at the state with the largest incoming count.
    #[default]
    MostMeasured,
    Anchor(State),
    MeanZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Stop when the projected gradient max-norm drops to this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Bound on |βV| relative to the anchor; `None` means ln(total samples).
    pub cap: Option<f64>,
    pub gauge: GaugeChoice,
    pub denominator: Denominator,
    /// Keep the action value of every accepted iteration.
    pub record_trace: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 1e-8,
            max_iterations: 10_000,
            cap: None,
            gauge: GaugeChoice::MostMeasured,
            denominator: Denominator::RowsWithKernel,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialAssignment {
    pub table: PotentialTable,
    pub gauge: Gauge,
    pub fit_action: f64,
    pub grad_norm: f64,
    pub cap: f64,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub trace: Vec<f64>,
}

impl PotentialAssignment {
    pub fn value(&self, s: &State) -> Option<f64> {
        self.table.finite(s)
    }

    pub fn is_divergent(&self, s: &State) -> bool {
        self.table.divergent_high.contains(s)
    }
}

pub fn default_cap(kernel: &KernelEstimate) -> f64 {
    (kernel.total_samples().max(2) as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Absent,
    Free,
    Pinned,
    Divergent,
}

// Graph view of a kernel shared by both solvers.
struct Graph {
    n: usize,
    involved: Vec<bool>,
    incoming_count: Vec<u64>,
    // directed edges (from, to)
    edges: Vec<(usize, usize)>,
}

impl Graph {
    fn new(kernel: &KernelEstimate) -> Self {
        let n = kernel.states().len();
        let mut involved = vec![false; n];
        let mut incoming_count = vec![0; n];
        let mut edges = Vec::new();
        for row in kernel.rows() {
            for e in &row.entries {
                involved[row.from] = true;
                involved[e.to] = true;
                incoming_count[e.to] += e.count;
                edges.push((row.from, e.to));
            }
        }
        Graph { n, involved, incoming_count, edges }
    }

    /// Connected components (undirected) over states for which `keep` holds.
    fn components(&self, keep: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for &(a, b) in &self.edges {
            if keep(a) && keep(b) {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for i in (0..self.n).filter(|&i| keep(i)) {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        groups.into_values().collect()
    }

    /// Most-measured member; ties go to the lexicographically first state.
    fn most_measured(&self, members: &[usize]) -> usize {
        let mut best = members[0];
        for &i in members {
            if self.incoming_count[i] > self.incoming_count[best] {
                best = i;
            }
        }
        best
    }
}

fn resolve_anchor(kernel: &KernelEstimate, graph: &Graph, gauge: &GaugeChoice) -> Result<Option<usize>, SolverError> {
    match gauge {
        GaugeChoice::Anchor(a) => match kernel.index_of(a) {
            Some(i) if graph.involved[i] => Ok(Some(i)),
            _ => Err(SolverError::UnknownAnchor(a.to_string())),
        },
        GaugeChoice::MostMeasured => {
            let members: Vec<usize> = (0..graph.n).filter(|&i| graph.involved[i]).collect();
            Ok(Some(graph.most_measured(&members)))
        }
        GaugeChoice::MeanZero => Ok(None),
    }
}

// Shifts each component of finite states to the requested gauge and builds the
// returned table.
fn apply_gauge(
    kernel: &KernelEstimate,
    graph: &Graph,
    v: &mut [f64],
    status: &[Status],
    anchor: Option<usize>,
) -> (PotentialTable, Gauge) {
    let finite = |i: usize| matches!(status[i], Status::Free | Status::Pinned);
    for comp in graph.components(finite) {
        let shift = match anchor {
            Some(a) if comp.contains(&a) => v[a],
            Some(_) => v[graph.most_measured(&comp)],
            None => comp.iter().map(|&i| v[i]).sum::<f64>() / comp.len() as f64,
        };
        for &i in &comp {
            v[i] -= shift;
        }
    }
    let states = kernel.states();
    let mut table = PotentialTable::new();
    for i in 0..graph.n {
        match status[i] {
            Status::Free | Status::Pinned => {
                table.values.insert(states[i].clone(), v[i]);
            }
            Status::Divergent => {
                table.divergent_high.insert(states[i].clone());
            }
            Status::Absent => {}
        }
    }
    let gauge = match anchor {
        Some(a) => Gauge::Anchor(states[a].clone()),
        None => Gauge::MeanZero,
    };
    (table, gauge)
}

fn inf_norm(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m, x| m.max(x.abs()))
}

struct Descent<'a, K: ViolationKernel + ?Sized> {
    kernel: &'a KernelEstimate,
    k: &'a K,
    divisor: f64,
    cap: f64,
    status: Vec<Status>,
    v: Vec<f64>,
    grad: Vec<f64>,
    trace: Option<Vec<f64>>,
    iterations: usize,
}

enum RoundEnd {
    Converged,
    Stalled,
    OutOfBudget,
}

impl<'a, K: ViolationKernel + ?Sized> Descent<'a, K> {
    fn objective(&self, v: &[f64]) -> f64 {
        action_sum_indexed(self.kernel, v, self.k).0 / self.divisor
    }

    fn refresh_gradient(&mut self) {
        gradient_indexed(self.kernel, &self.v, self.k, &mut self.grad);
        for g in &mut self.grad {
            *g /= self.divisor;
        }
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(-self.cap, self.cap)
    }

    fn free(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.v.len()).filter(|&i| self.status[i] == Status::Free)
    }

    /// Max-norm of the projected gradient over free states.
    fn projected_norm(&self) -> f64 {
        inf_norm(self.free().map(|i| self.v[i] - self.clamp(self.v[i] - self.grad[i])))
    }

    // Directional derivative at `trial` along the step from the current point.
    fn slope_at(&self, trial: &[f64], free: &[usize]) -> f64 {
        let mut g = vec![0.0; trial.len()];
        gradient_indexed(self.kernel, trial, self.k, &mut g);
        free.iter().map(|&i| g[i] / self.divisor * (trial[i] - self.v[i])).sum()
    }

    fn record(&mut self, f: f64) {
        if let Some(t) = self.trace.as_mut() {
            t.push(f);
        }
    }

    fn run_round(&mut self, tolerance: f64, max_iterations: usize) -> RoundEnd {
        let free: Vec<usize> = self.free().collect();
        let mut f = self.objective(&self.v);
        self.record(f);
        self.refresh_gradient();
        let mut step = 1.0 / inf_norm(free.iter().map(|&i| self.grad[i])).max(1e-300);
        let mut trial = self.v.clone();
        let mut old_grad = vec![0.0; self.v.len()];
        loop {
            if self.projected_norm() <= tolerance {
                return RoundEnd::Converged;
            }
            if self.iterations >= max_iterations {
                return RoundEnd::OutOfBudget;
            }
            let mut accepted = None;
            for _ in 0..80 {
                let mut slope = 0.0;
                for &i in &free {
                    trial[i] = self.clamp(self.v[i] - step * self.grad[i]);
                    slope += self.grad[i] * (trial[i] - self.v[i]);
                }
                if slope >= 0.0 {
                    break;
                }
                let f_trial = self.objective(&trial);
                if f_trial <= f + 1e-4 * slope {
                    accepted = Some(f_trial);
                    break;
                }
                // Near the minimum the decrease is below the resolution of f.
                // For a convex objective a non-positive directional derivative
                // at the trial point still guarantees descent, and the
                // trapezoid rule gives the decrease far more accurately than
                // differencing two rounded values.
                if (f_trial - f).abs() <= 64.0 * f64::EPSILON * f.abs() {
                    let end_slope = self.slope_at(&trial, &free);
                    if end_slope <= 0.0 {
                        accepted = Some(f + 0.5 * (slope + end_slope));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some(f_new) = accepted else {
                return RoundEnd::Stalled;
            };
            self.iterations += 1;
            old_grad.copy_from_slice(&self.grad);
            let (mut ss, mut sy) = (0.0, 0.0);
            std::mem::swap(&mut self.v, &mut trial);
            self.refresh_gradient();
            for &i in &free {
                let s = self.v[i] - trial[i];
                ss += s * s;
                sy += s * (self.grad[i] - old_grad[i]);
                trial[i] = self.v[i];
            }
            // Barzilai-Borwein trial step for the next line search.
            step = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (step * 2.0).min(1e12) };
            f = f_new;
            self.record(f);
        }
    }

    /// States at the upper bound that still want to rise and receive no flow
    /// from finite states.
    fn escaping_states(&self, graph: &Graph) -> Vec<usize> {
        let mut fed = vec![false; self.v.len()];
        for &(a, b) in &graph.edges {
            if self.status[a] != Status::Divergent {
                fed[b] = true;
            }
        }
        self.free()
            .filter(|&i| self.v[i] >= self.cap && self.grad[i] < 0.0 && !fed[i])
            .collect()
    }
}

/// Fits βV by minimizing the action over `kernel`.
pub fn fit_potential(
    kernel: &KernelEstimate,
    spec: &ViolationKernelSpec,
    opts: &FitOptions,
) -> Result<PotentialAssignment, SolverError> {
    fit_potential_with(kernel, spec, opts)
}

/// [`fit_potential`] for any violation kernel.
pub fn fit_potential_with<K: ViolationKernel + ?Sized>(
    kernel: &KernelEstimate,
    k: &K,
    opts: &FitOptions,
) -> Result<PotentialAssignment, SolverError> {
    if kernel.is_empty() {
        return Err(SolverError::EmptyKernel);
    }
    if !(opts.tolerance > 0.0) {
        return Err(SolverError::BadOptions(format!("tolerance must be positive, got {}", opts.tolerance)));
    }
    let cap = opts.cap.unwrap_or_else(|| default_cap(kernel));
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(SolverError::BadOptions(format!("cap must be positive and finite, got {cap}")));
    }
    let graph = Graph::new(kernel);
    let anchor = resolve_anchor(kernel, &graph, &opts.gauge)?;

    let mut status: Vec<Status> =
        graph.involved.iter().map(|&inv| if inv { Status::Free } else { Status::Absent }).collect();
    for comp in graph.components(|i| graph.involved[i]) {
        let pin = match anchor {
            Some(a) if comp.contains(&a) => a,
            _ => graph.most_measured(&comp),
        };
        status[pin] = Status::Pinned;
    }

    let n = graph.n;
    let mut d = Descent {
        kernel,
        k,
        divisor: opts.denominator.divisor(kernel) as f64,
        cap,
        status,
        v: vec![0.0; n],
        grad: vec![0.0; n],
        trace: opts.record_trace.then(Vec::new),
        iterations: 0,
    };

    let end = loop {
        let end = d.run_round(opts.tolerance, opts.max_iterations);
        if !matches!(end, RoundEnd::Converged) {
            break end;
        }
        let escaping = d.escaping_states(&graph);
        if escaping.is_empty() {
            break end;
        }
        for i in escaping {
            d.status[i] = Status::Divergent;
            d.v[i] = f64::INFINITY;
        }
    };

    d.refresh_gradient();
    let grad_norm = d.projected_norm();
    let fit_action = d.objective(&d.v);
    let converged = grad_norm <= opts.tolerance;
    let (table, gauge) = apply_gauge(kernel, &graph, &mut d.v, &d.status, anchor);
    let assignment = PotentialAssignment {
        table,
        gauge,
        fit_action,
        grad_norm,
        cap,
        converged,
        iterations: d.iterations,
        trace: d.trace.unwrap_or_default(),
    };
    match end {
        RoundEnd::Converged => Ok(assignment),
        RoundEnd::Stalled if converged => Ok(assignment),
        _ => Err(SolverError::NoConvergence { partial: Box::new(assignment) }),
    }
}

/// Closed-form potentials for near-deterministic agents.
///
/// States that emit flow but receive none from finite states are divergent
/// (repeatedly, so chains of such states all diverge). Every remaining
/// transition must be part of a mutually measured pair and those pairs must
/// form a forest; βV then follows from log(T(g←f)/T(f←g)) = βV(f) − βV(g)
/// along the tree. Anything else is [`SolverError::NotTreeReducible`].
pub fn solve_extreme_analytic(kernel: &KernelEstimate, gauge: &GaugeChoice) -> Result<PotentialAssignment, SolverError> {
    if kernel.is_empty() {
        return Err(SolverError::EmptyKernel);
    }
    let graph = Graph::new(kernel);
    let anchor = resolve_anchor(kernel, &graph, gauge)?;
    let mut status: Vec<Status> =
        graph.involved.iter().map(|&inv| if inv { Status::Free } else { Status::Absent }).collect();

    loop {
        let mut fed = vec![false; graph.n];
        let mut emits = vec![false; graph.n];
        for &(a, b) in &graph.edges {
            if status[a] != Status::Divergent {
                fed[b] = true;
                emits[a] = true;
            }
        }
        let peel: Vec<usize> =
            (0..graph.n).filter(|&i| status[i] == Status::Free && emits[i] && !fed[i]).collect();
        if peel.is_empty() {
            break;
        }
        for i in peel {
            status[i] = Status::Divergent;
        }
    }

    let states = kernel.states();
    let finite = |i: usize| status[i] == Status::Free;
    let edge_set: BTreeSet<(usize, usize)> = graph.edges.iter().copied().collect();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); graph.n];
    for &(a, b) in &edge_set {
        if !(finite(a) && finite(b)) {
            continue;
        }
        if !edge_set.contains(&(b, a)) {
            return Err(SolverError::NotTreeReducible(format!(
                "one-way transition {} -> {} between finite states",
                states[a], states[b]
            )));
        }
        if a < b {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
    }
    let components = graph.components(finite);
    for comp in &components {
        let n_edges: usize = comp.iter().map(|&i| adjacency[i].len()).sum::<usize>() / 2;
        if n_edges + 1 != comp.len() {
            return Err(SolverError::NotTreeReducible(format!(
                "measured pairs around {} form a cycle",
                states[comp[0]]
            )));
        }
    }

    let mut v = vec![0.0; graph.n];
    let mut seen = vec![false; graph.n];
    for comp in &components {
        let root = graph.most_measured(comp);
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(f) = queue.pop_front() {
            for &g in &adjacency[f] {
                if !seen[g] {
                    seen[g] = true;
                    v[g] = v[f] - (kernel.prob_idx(f, g) / kernel.prob_idx(g, f)).ln();
                    queue.push_back(g);
                }
            }
        }
    }
    for x in v.iter_mut().zip(&status).filter(|(_, s)| **s == Status::Divergent) {
        *x.0 = f64::INFINITY;
    }

    let k = ViolationKernelSpec::exp_half();
    let divisor = Denominator::RowsWithKernel.divisor(kernel) as f64;
    let mut grad = vec![0.0; graph.n];
    gradient_indexed(kernel, &v, &k, &mut grad);
    let grad_norm = inf_norm((0..graph.n).filter(|&i| finite(i)).map(|i| grad[i] / divisor));
    let fit_action = action_sum_indexed(kernel, &v, &k).0 / divisor;
    let (table, gauge) = apply_gauge(kernel, &graph, &mut v, &status, anchor);
    Ok(PotentialAssignment {
        table,
        gauge,
        fit_action,
        grad_norm,
        cap: default_cap(kernel),
        converged: true,
        iterations: 0,
        trace: Vec::new(),
    })
}

/// Analytic solution when the kernel is tree-reducible, numerical fit otherwise.
pub fn solve_extreme_or_fit(
    kernel: &KernelEstimate,
    spec: &ViolationKernelSpec,
    opts: &FitOptions,
) -> Result<PotentialAssignment, SolverError> {
    match solve_extreme_analytic(kernel, &opts.gauge) {
        Err(SolverError::NotTreeReducible(_)) => fit_potential(kernel, spec, opts),
        other => other,
    }
}
