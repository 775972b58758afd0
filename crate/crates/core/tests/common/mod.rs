#![allow(dead_code)]

use std::collections::BTreeMap;

use balance_lab::harness::{run_sampling, GeneratorBinding, SamplingOptions, WordState};
use balance_lab::{count_transitions, CountTable, State};

pub fn s(name: &str) -> State {
    State::new(name).unwrap()
}

pub fn names(n: usize) -> Vec<State> {
    (0..n).map(|i| s(&format!("S{i:02}"))).collect()
}

/// Counts that satisfy detailed balance exactly in integers.
///
/// N(g←f) = w(g)·m(f,g) with m symmetric, so N(g←f)/N(f←g) = w(g)/w(f) and
/// βV(f) = −ln w(f). Pairs with m = 0 are unmeasured in both directions.
pub fn db_counts(weights: &[u64], m: &[Vec<u64>]) -> (CountTable, Vec<State>, Vec<f64>) {
    let states = names(weights.len());
    let mut counts = CountTable::new();
    for (i, f) in states.iter().enumerate() {
        for (j, g) in states.iter().enumerate() {
            let k = m[i.min(j)][i.max(j)];
            if i != j && k > 0 {
                counts.add_count(f, g, weights[j] * k);
            }
        }
    }
    let v = weights.iter().map(|&w| -(w as f64).ln()).collect();
    (counts, states, v)
}

/// Largest single count in `counts`, handy as a fixed budget.
pub fn max_count(counts: &CountTable) -> u64 {
    counts.transitions().map(|(_, _, n)| n).max().unwrap_or(1)
}

/// Seeded Metropolis chain over `words` with the given potentials.
pub fn metropolis_counts(words: &[(&str, f64)], n_samples: usize, seed: u64) -> CountTable {
    let potentials: BTreeMap<WordState, f64> =
        words.iter().map(|(w, v)| (WordState::new(w).unwrap(), *v)).collect();
    let proposals: Vec<WordState> = potentials.keys().cloned().collect();
    let start = proposals[0].clone();
    let binding = GeneratorBinding::ScriptedMetropolis { potentials, proposals, seed };
    let log = run_sampling(&binding, &start, n_samples, 1, &SamplingOptions::new("test"), None).unwrap();
    count_transitions(&log).unwrap()
}

pub const SIX_WORDS: [(&str, f64); 6] = [
    ("ATTITUDE", 0.0),
    ("DISCIPLINE", 0.4),
    ("EXCELLENT", 0.9),
    ("BLISSFUL", 1.3),
    ("TURKEY", 1.8),
    ("PERSONAL", 2.2),
];
