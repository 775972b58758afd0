//! Detailed-balance analysis for agent transition data.
//!
//! Counts and kernels live in [`ledger`], the action and its gradient in
//! [`action`], potential fitting in [`solver`], and the balance tests in
//! [`verify`].

pub mod action;
pub mod data;
pub mod diagnostics;
pub mod harness;
pub mod ledger;
pub mod potential;
pub mod scorer;
pub mod solver;
pub mod special;
pub mod verify;

pub use action::{action, action_gradient, eval_k, k_condition_check, ActionError, ActionValue, Denominator, KernelKind, ViolationKernel, ViolationKernelSpec};
pub use ledger::{count_transitions, estimate_kernel, log_ratio_with_error, parse_transition_log, CountTable, Destination, KernelEstimate, KernelPolicy, LedgerError, LogRatio, State, TransitionEvent, TransitionLog, ESCAPE};
pub use potential::{Potential, PotentialError, PotentialTable};
pub use solver::{fit_potential, solve_extreme_analytic, solve_extreme_or_fit, FitOptions, Gauge, GaugeChoice, PotentialAssignment, SolverError};
