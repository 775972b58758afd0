//! Bundled count tables for two near-deterministic word agents.
//!
//! The Claude table is the published one. The Gemini table is a
//! reconstruction: only the resulting potentials were published, so the
//! counts were chosen to reproduce them (ATTITUDE 0, DISCIPLINE 0.5,
//! EXCELLENT 4.8, BLISSFUL 5.2, every other state divergent).

use crate::ledger::{CountTable, KernelPolicy};

pub const CLAUDE_COUNTS_CSV: &str = include_str!("../data/claude_counts.csv");
pub const GEMINI_COUNTS_CSV: &str = include_str!("../data/gemini_counts.csv");

/// 20000 generations over five prompt words.
pub const CLAUDE_POLICY: KernelPolicy = KernelPolicy::FixedBudget { budget: 4000 };
/// 20000 generations over thirteen prompt words.
pub const GEMINI_POLICY: KernelPolicy = KernelPolicy::FixedBudget { budget: 1538 };

pub fn claude_counts() -> CountTable {
    CountTable::read_csv(CLAUDE_COUNTS_CSV.as_bytes()).expect("bundled table is valid")
}

pub fn gemini_counts() -> CountTable {
    CountTable::read_csv(GEMINI_COUNTS_CSV.as_bytes()).expect("bundled table is valid")
}
