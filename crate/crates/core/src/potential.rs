//! Potential tables (state → βV) and their CSV form.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{CountTable, State};

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error("potential csv line {line}: {message}")]
    BadRow { line: u64, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    Finite(f64),
    /// Unbounded above: the state only leaks flow outward.
    DivergentHigh,
}

impl Potential {
    /// Finite values as-is, divergent states as +∞.
    pub fn as_f64(self) -> f64 {
        match self {
            Potential::Finite(v) => v,
            Potential::DivergentHigh => f64::INFINITY,
        }
    }
}

/// βV per state plus the set of divergent-high states.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PotentialTable {
    pub values: BTreeMap<State, f64>,
    pub divergent_high: BTreeSet<State>,
}

impl PotentialTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_values<I: IntoIterator<Item = (State, f64)>>(values: I) -> Self {
        PotentialTable { values: values.into_iter().collect(), divergent_high: BTreeSet::new() }
    }

    pub fn get(&self, s: &State) -> Option<Potential> {
        if self.divergent_high.contains(s) {
            Some(Potential::DivergentHigh)
        } else {
            self.values.get(s).map(|v| Potential::Finite(*v))
        }
    }

    pub fn finite(&self, s: &State) -> Option<f64> {
        match self.get(s) {
            Some(Potential::Finite(v)) => Some(v),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len() + self.divergent_high.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same table with every finite value shifted by `c`.
    pub fn shifted(&self, c: f64) -> Self {
        PotentialTable {
            values: self.values.iter().map(|(s, v)| (s.clone(), v + c)).collect(),
            divergent_high: self.divergent_high.clone(),
        }
    }

    /// Writes `state,beta_v,divergent,n_in,n_out`. Divergent rows carry
    /// `beta_v=inf`.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        counts: &CountTable,
        fmt_real: impl Fn(f64) -> String,
    ) -> Result<(), PotentialError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["state", "beta_v", "divergent", "n_in", "n_out"])?;
        let mut states: Vec<&State> = self.values.keys().chain(self.divergent_high.iter()).collect();
        states.sort();
        for s in states {
            let (value, divergent) = match self.get(s) {
                Some(Potential::Finite(v)) => (fmt_real(v), "false"),
                _ => ("inf".to_string(), "true"),
            };
            let n_in = counts.incoming(s).to_string();
            let n_out = (counts.outgoing(s) - counts.count(s, s)).to_string();
            w.write_record([s.as_str(), value.as_str(), divergent, n_in.as_str(), n_out.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, PotentialError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("state") || headers.get(1) != Some("beta_v") || headers.get(2) != Some("divergent") {
            return Err(PotentialError::BadRow { line: 1, message: format!("unexpected header {headers:?}") });
        }
        let mut table = PotentialTable::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let bad = |message: String| PotentialError::BadRow { line, message };
            let state = State::new(&record[0]).map_err(|e| bad(e.to_string()))?;
            let divergent = match &record[2] {
                "true" => true,
                "false" => false,
                other => return Err(bad(format!("bad divergent flag {other:?}"))),
            };
            if divergent {
                table.divergent_high.insert(state);
            } else {
                let v: f64 = record[1].parse().map_err(|_| bad(format!("bad beta_v {:?}", &record[1])))?;
                if !v.is_finite() {
                    return Err(bad(format!("non-finite beta_v for non-divergent state {state}")));
                }
                table.values.insert(state, v);
            }
        }
        Ok(table)
    }
}
