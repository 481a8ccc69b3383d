//! Explicit sparse discrete-time Markov chain, the shared target of both
//! compilation paths (direct chain-binomial semantics and SCM expansion).

use std::fmt::Write as _;

/// Structural tolerance for row-stochasticity checks.
pub const ROW_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct MarkovChain {
    /// State keys in BFS discovery order. For compartmental chains a key
    /// holds compartment counts; for SCM expansions it is
    /// `[control, counters...]`.
    pub states: Vec<Vec<u32>>,
    /// Sparse rows: `(successor index, probability)`, sorted by successor.
    pub rows: Vec<Vec<(u32, f64)>>,
    /// Expected one-step reward per state (sum of p * reward over the
    /// outgoing transitions).
    pub row_reward: Vec<f64>,
    pub initial: usize,
    /// Index of the absorbing violation sink, when the chain has one.
    pub violation: Option<usize>,
}

impl MarkovChain {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn is_violation(&self, idx: usize) -> bool {
        self.violation == Some(idx)
    }

    /// Maximum deviation of any row sum from 1.
    pub fn max_row_defect(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| (row.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Reverse adjacency lists (predecessor indices, deduplicated).
    pub fn predecessors(&self) -> Vec<Vec<u32>> {
        let mut pred = vec![Vec::new(); self.states.len()];
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, p) in row {
                if p > 0.0 {
                    pred[t as usize].push(s as u32);
                }
            }
        }
        for list in &mut pred {
            list.sort_unstable();
            list.dedup();
        }
        pred
    }

    /// Debug text format: one `src dst prob` line per transition.
    pub fn to_sparse_text(&self) -> String {
        let mut out = String::new();
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, p) in row {
                writeln!(out, "{} {} {:.17e}", s, t, p).unwrap();
            }
        }
        out
    }
}
