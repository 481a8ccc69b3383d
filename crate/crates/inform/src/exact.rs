//! Exact analysis of explicit chains: until/reachability probabilities and
//! expected accumulated reward, solved by Gauss-Seidel iteration after a
//! qualitative (graph-based) precomputation.

use crate::chain::MarkovChain;
use crate::model::{CompartmentalModel, State};
use crate::semantics::{
    build_markov_chain, successor_distribution_tracking_edge, SemanticsError,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExactOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_states: usize,
}

impl Default for ExactOptions {
    fn default() -> Self {
        ExactOptions {
            tol: 1e-12,
            max_iter: 1_000_000,
            max_states: crate::semantics::DEFAULT_MAX_STATES,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExactAnswer {
    pub value: f64,
    /// Set when an expected reward diverges; `value` is then meaningless.
    pub infinite: bool,
    /// Largest value change in the final sweep.
    pub residual: f64,
    pub iterations: usize,
}

impl ExactAnswer {
    fn closed(value: f64) -> Self {
        ExactAnswer {
            value,
            infinite: false,
            residual: 0.0,
            iterations: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExactError {
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("no convergence after {iterations} sweeps (residual {residual})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("query references edge {edge}, model has {edges} edges")]
    EdgeOutOfRange { edge: usize, edges: usize },
}

/// Probabilistic queries answered by both engines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Query {
    /// Probability that the infectious compartments empty out before a
    /// step-semantics violation.
    PopInc,
    /// Expected number of steps until the infectious compartments are
    /// empty (a violation also stops the clock).
    Eoe,
    /// Probability that the first nonzero flow over `edge` moves the
    /// edge's entire initial source population at once.
    OneShot { edge: usize },
    /// Probability of ever visiting `target`.
    Reach { target: State },
    /// Expected number of steps until `target` is first visited.
    ExpectedSteps { target: State },
}

// ---------------------------------------------------------------------
// Graph precomputations
// ---------------------------------------------------------------------

/// Backward closure of `seed` along `pred`, restricted to states where
/// `through` holds (seed states are always included).
fn backward_closure(
    pred: &[Vec<u32>],
    seed: &[bool],
    through: impl Fn(usize) -> bool,
) -> Vec<bool> {
    let mut reached = seed.to_vec();
    let mut stack: Vec<usize> = seed
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    while let Some(s) = stack.pop() {
        for &p in &pred[s] {
            let p = p as usize;
            if !reached[p] && through(p) {
                reached[p] = true;
                stack.push(p);
            }
        }
    }
    reached
}

// ---------------------------------------------------------------------
// Core solvers
// ---------------------------------------------------------------------

/// P[safe U target] per state, solved by Gauss-Seidel after identifying
/// the probability-0 and probability-1 states graph-theoretically.
pub fn until_probability(
    chain: &MarkovChain,
    safe: &[bool],
    target: &[bool],
    opts: &ExactOptions,
) -> Result<(Vec<f64>, ExactAnswer), ExactError> {
    let n = chain.n_states();
    let pred = chain.predecessors();
    // can reach target through safe, non-target states
    let can_reach = backward_closure(&pred, target, |s| safe[s] && !target[s]);
    // prob0: unsafe non-target states, or no safe path to target
    let prob0: Vec<bool> = (0..n).map(|s| !target[s] && (!safe[s] || !can_reach[s])).collect();
    // prob1: cannot reach a prob0 state through safe, non-target states
    let reaches_prob0 = backward_closure(&pred, &prob0, |s| safe[s] && !target[s]);
    let mut value = vec![0.0; n];
    let mut open = Vec::new();
    for s in 0..n {
        if target[s] || !reaches_prob0[s] && !prob0[s] {
            value[s] = 1.0;
        } else if !prob0[s] {
            open.push(s);
        }
    }
    let stats = gauss_seidel(chain, &mut value, &open, &[], opts)?;
    Ok((value, stats))
}

/// P[F target] per state.
pub fn reach_probability(
    chain: &MarkovChain,
    target: &[bool],
    opts: &ExactOptions,
) -> Result<(Vec<f64>, ExactAnswer), ExactError> {
    until_probability(chain, &vec![true; chain.n_states()], target, opts)
}

/// Expected reward accumulated strictly before first hitting `target`,
/// using the chain's per-state rewards. The flag `infinite` is set (per
/// state via f64::INFINITY) where the target is not reached almost surely.
pub fn expected_total_reward(
    chain: &MarkovChain,
    target: &[bool],
    opts: &ExactOptions,
) -> Result<(Vec<f64>, ExactAnswer), ExactError> {
    let n = chain.n_states();
    let pred = chain.predecessors();
    let can_reach = backward_closure(&pred, target, |_| true);
    let no_reach: Vec<bool> = can_reach.iter().map(|&b| !b).collect();
    let divergent = backward_closure(&pred, &no_reach, |s| !target[s]);
    let mut value = vec![0.0; n];
    let mut open = Vec::new();
    for s in 0..n {
        if target[s] {
            value[s] = 0.0;
        } else if divergent[s] {
            value[s] = f64::INFINITY;
        } else {
            open.push(s);
        }
    }
    let rewards: Vec<f64> = chain.row_reward.clone();
    let stats = gauss_seidel(chain, &mut value, &open, &rewards, opts)?;
    Ok((value, stats))
}

/// In-place Gauss-Seidel sweeps over `open` states; `rewards` is empty
/// for probability systems.
fn gauss_seidel(
    chain: &MarkovChain,
    value: &mut [f64],
    open: &[usize],
    rewards: &[f64],
    opts: &ExactOptions,
) -> Result<ExactAnswer, ExactError> {
    let mut residual = 0.0;
    for iter in 1..=opts.max_iter {
        residual = 0.0;
        for &s in open {
            let mut acc = if rewards.is_empty() { 0.0 } else { rewards[s] };
            let mut self_p = 0.0;
            for &(t, p) in &chain.rows[s] {
                if t as usize == s {
                    self_p += p;
                } else {
                    acc += p * value[t as usize];
                }
            }
            let new = if self_p < 1.0 { acc / (1.0 - self_p) } else { acc };
            let delta = (new - value[s]).abs();
            if delta > residual {
                residual = delta;
            }
            value[s] = new;
        }
        if residual <= opts.tol {
            return Ok(ExactAnswer {
                value: f64::NAN,
                infinite: false,
                residual,
                iterations: iter,
            });
        }
    }
    if open.is_empty() {
        return Ok(ExactAnswer {
            value: f64::NAN,
            infinite: false,
            residual: 0.0,
            iterations: 0,
        });
    }
    Err(ExactError::NoConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

// ---------------------------------------------------------------------
// Query evaluation on compartmental models
// ---------------------------------------------------------------------

fn epidemic_over_flags(model: &CompartmentalModel, chain: &MarkovChain) -> Vec<bool> {
    chain
        .states
        .iter()
        .enumerate()
        .map(|(i, key)| {
            if chain.is_violation(i) {
                false
            } else {
                model.is_epidemic_over(key)
            }
        })
        .collect()
}

fn violation_flags(chain: &MarkovChain) -> Vec<bool> {
    (0..chain.n_states()).map(|i| chain.is_violation(i)).collect()
}

/// Compiles `model` from `initial` and answers `query` exactly.
pub fn evaluate(
    model: &CompartmentalModel,
    initial: &[u32],
    query: &Query,
    opts: &ExactOptions,
) -> Result<ExactAnswer, ExactError> {
    match query {
        Query::PopInc => {
            let chain = build_markov_chain(model, initial, opts.max_states)?;
            let over = epidemic_over_flags(model, &chain);
            let viol = violation_flags(&chain);
            let safe: Vec<bool> = viol.iter().map(|&v| !v).collect();
            let (vals, mut stats) = until_probability(&chain, &safe, &over, opts)?;
            stats.value = vals[chain.initial];
            Ok(stats)
        }
        Query::Eoe => {
            let chain = build_markov_chain(model, initial, opts.max_states)?;
            let mut target = epidemic_over_flags(model, &chain);
            if let Some(v) = chain.violation {
                target[v] = true;
            }
            let (vals, mut stats) = expected_total_reward(&chain, &target, opts)?;
            let v = vals[chain.initial];
            stats.infinite = v.is_infinite();
            stats.value = v;
            Ok(stats)
        }
        Query::OneShot { edge } => one_shot(model, initial, *edge, opts),
        Query::Reach { target } => {
            let chain = build_markov_chain(model, initial, opts.max_states)?;
            let flags: Vec<bool> = chain.states.iter().map(|s| s == target).collect();
            let (vals, mut stats) = reach_probability(&chain, &flags, opts)?;
            stats.value = vals[chain.initial];
            Ok(stats)
        }
        Query::ExpectedSteps { target } => {
            let chain = build_markov_chain(model, initial, opts.max_states)?;
            let flags: Vec<bool> = chain.states.iter().map(|s| s == target).collect();
            let (vals, mut stats) = expected_total_reward(&chain, &flags, opts)?;
            let v = vals[chain.initial];
            stats.infinite = v.is_infinite();
            stats.value = v;
            Ok(stats)
        }
    }
}

/// Probability of hitting the violation sink before the infectious
/// compartments empty out. Not in general the complement of the
/// stays-constant reading: cyclic models may admit runs where neither
/// event ever happens.
pub fn violation_probability(
    model: &CompartmentalModel,
    initial: &[u32],
    opts: &ExactOptions,
) -> Result<f64, ExactError> {
    let chain = build_markov_chain(model, initial, opts.max_states)?;
    let over = epidemic_over_flags(model, &chain);
    let viol = violation_flags(&chain);
    let safe: Vec<bool> = over.iter().map(|&o| !o).collect();
    let (vals, _) = until_probability(&chain, &safe, &viol, opts)?;
    Ok(vals[chain.initial])
}

/// Instrumented chain for the one-shot query: states are compartment
/// counts while the watched edge has not fired, plus absorbing success
/// and failure states. A violation while watching counts as failure.
fn one_shot(
    model: &CompartmentalModel,
    initial: &[u32],
    edge: usize,
    opts: &ExactOptions,
) -> Result<ExactAnswer, ExactError> {
    if edge >= model.n_edges() {
        return Err(ExactError::EdgeOutOfRange {
            edge,
            edges: model.n_edges(),
        });
    }
    let full = initial[model.edges[edge].src];
    if full == 0 {
        // nothing can ever flow; vacuously a full first shot
        return Ok(ExactAnswer::closed(1.0));
    }
    let total: u64 = initial.iter().map(|&x| x as u64).sum();
    if total != model.pop as u64 {
        return Err(SemanticsError::Domain(format!(
            "initial state has population {}, model expects {}",
            total, model.pop
        ))
        .into());
    }

    let mut index: HashMap<State, u32> = HashMap::new();
    let mut states: Vec<State> = vec![initial.to_vec()];
    index.insert(initial.to_vec(), 0);
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut frontier = std::collections::VecDeque::from([0usize]);
    // success and failure indices are assigned after expansion
    let mut pending: Vec<(usize, f64, f64)> = Vec::new(); // (state, p_success, p_failure)

    while let Some(si) = frontier.pop_front() {
        debug_assert_eq!(si, rows.len());
        let (entries, violation_mass) =
            successor_distribution_tracking_edge(model, &states[si], edge);
        let mut row: HashMap<u32, f64> = HashMap::new();
        let mut p_succ = 0.0;
        let mut p_fail = violation_mass;
        for ((flow, next), p) in entries {
            if flow == 0 {
                let idx = match index.get(&next) {
                    Some(&i) => i,
                    None => {
                        if states.len() >= opts.max_states {
                            return Err(SemanticsError::StateSpaceExceeded(opts.max_states).into());
                        }
                        let i = states.len() as u32;
                        index.insert(next.clone(), i);
                        states.push(next);
                        frontier.push_back(i as usize);
                        i
                    }
                };
                *row.entry(idx).or_insert(0.0) += p;
            } else if flow == full {
                p_succ += p;
            } else {
                p_fail += p;
            }
        }
        pending.push((si, p_succ, p_fail));
        let mut row: Vec<(u32, f64)> = row.into_iter().collect();
        row.sort_unstable_by_key(|&(i, _)| i);
        rows.push(row);
    }

    let success = states.len();
    let failure = states.len() + 1;
    states.push(Vec::new());
    states.push(Vec::new());
    for (s, p_succ, p_fail) in pending {
        if p_succ > 0.0 {
            rows[s].push((success as u32, p_succ));
        }
        if p_fail > 0.0 {
            rows[s].push((failure as u32, p_fail));
        }
    }
    rows.push(vec![(success as u32, 1.0)]);
    rows.push(vec![(failure as u32, 1.0)]);
    let n = states.len();
    let chain = MarkovChain {
        states,
        rows,
        row_reward: vec![0.0; n],
        initial: 0,
        violation: None,
    };
    let mut target = vec![false; n];
    target[success] = true;
    let (vals, mut stats) = reach_probability(&chain, &target, opts)?;
    stats.value = vals[chain.initial];
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_models;

    fn two_state(p: f64) -> MarkovChain {
        MarkovChain {
            states: vec![vec![0], vec![1]],
            rows: vec![vec![(0, 1.0 - p), (1, p)], vec![(1, 1.0)]],
            row_reward: vec![1.0, 1.0],
            initial: 0,
            violation: None,
        }
    }

    #[test]
    fn geometric_hitting_time() {
        let p = 0.125;
        let chain = two_state(p);
        let target = vec![false, true];
        let (vals, _) = reach_probability(&chain, &target, &ExactOptions::default()).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
        let (ev, _) = expected_total_reward(&chain, &target, &ExactOptions::default()).unwrap();
        assert!((ev[0] - 1.0 / p).abs() < 1e-9);
    }

    #[test]
    fn gamblers_ruin() {
        // fair walk on 0..=4 absorbing at both ends; P(hit 4 | start i) = i/4
        let n = 5;
        let mut rows = vec![Vec::new(); n];
        rows[0] = vec![(0, 1.0)];
        rows[4] = vec![(4, 1.0)];
        for i in 1..4 {
            rows[i] = vec![((i - 1) as u32, 0.5), ((i + 1) as u32, 0.5)];
        }
        let chain = MarkovChain {
            states: (0..n).map(|i| vec![i as u32]).collect(),
            rows,
            row_reward: vec![1.0; n],
            initial: 2,
            violation: None,
        };
        let mut target = vec![false; n];
        target[4] = true;
        let (vals, _) = reach_probability(&chain, &target, &ExactOptions::default()).unwrap();
        for i in 0..n {
            assert!((vals[i] - i as f64 / 4.0).abs() < 1e-10, "state {}", i);
        }
        // expected absorption time from i is i*(4-i) against {0,4}
        target[0] = true;
        let (ev, _) = expected_total_reward(&chain, &target, &ExactOptions::default()).unwrap();
        for i in 0..n {
            assert!((ev[i] - (i * (4 - i)) as f64).abs() < 1e-8, "state {}", i);
        }
    }

    #[test]
    fn divergent_reward_flagged() {
        // target unreachable: expected time is infinite
        let chain = two_state(0.5);
        let target = vec![false, false];
        let (ev, _) = expected_total_reward(&chain, &target, &ExactOptions::default()).unwrap();
        assert!(ev[0].is_infinite());
    }

    #[test]
    fn until_blocked_by_unsafe_states() {
        // path to target must pass through an unsafe state
        let chain = MarkovChain {
            states: vec![vec![0], vec![1], vec![2]],
            rows: vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(2, 1.0)]],
            row_reward: vec![1.0; 3],
            initial: 0,
            violation: None,
        };
        let safe = vec![true, false, true];
        let target = vec![false, false, true];
        let (vals, _) = until_probability(&chain, &safe, &target, &ExactOptions::default()).unwrap();
        assert_eq!(vals[0], 0.0);
        assert_eq!(vals[1], 0.0);
        assert_eq!(vals[2], 1.0);
    }

    #[test]
    fn matches_dense_solve_on_sir() {
        // cross-check Gauss-Seidel against a dense Gaussian elimination
        let m = builtin_models().remove("sir").unwrap().with_population(4);
        let chain = crate::semantics::build_markov_chain(&m, &[3, 1, 0], 100_000).unwrap();
        let target: Vec<bool> = chain
            .states
            .iter()
            .map(|s| s.len() == 3 && s[1] == 0 && s[0] == 0)
            .collect();
        let (vals, _) = reach_probability(&chain, &target, &ExactOptions::default()).unwrap();

        // dense solve of (I - P_restricted) x = P * indicator-ish system
        let n = chain.n_states();
        let mut a = vec![vec![0.0; n + 1]; n];
        for s in 0..n {
            a[s][s] = 1.0;
            if target[s] {
                a[s][n] = 1.0;
                continue;
            }
            // pin absorbing non-target states at probability 0
            if chain.rows[s] == vec![(s as u32, 1.0)] {
                continue;
            }
            for &(t, p) in &chain.rows[s] {
                a[s][t as usize] -= p;
            }
        }
        // eliminate
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            if d.abs() < 1e-14 {
                continue;
            }
            for k in col..=n {
                a[col][k] /= d;
            }
            for r in 0..n {
                if r != col && a[r][col] != 0.0 {
                    let f = a[r][col];
                    for k in col..=n {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
        for s in 0..n {
            assert!(
                (vals[s] - a[s][n]).abs() < 1e-9,
                "state {}: {} vs {}",
                s,
                vals[s],
                a[s][n]
            );
        }
    }

    #[test]
    fn sir_popinc_is_one() {
        // out-degree one everywhere: no violation is possible
        let m = builtin_models().remove("sir").unwrap().with_population(6);
        let ans = evaluate(&m, &[4, 2, 0], &Query::PopInc, &ExactOptions::default()).unwrap();
        assert!((ans.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sir_eoe_finite() {
        let m = builtin_models().remove("sir").unwrap().with_population(4);
        let ans = evaluate(&m, &[3, 1, 0], &Query::Eoe, &ExactOptions::default()).unwrap();
        assert!(!ans.infinite);
        assert!(ans.value > 1.0 && ans.value < 100.0);
    }

    #[test]
    fn one_shot_closed_form() {
        // single susceptible: success iff infection fires before recovery
        // removes the last infectious individual
        let m = builtin_models().remove("sir").unwrap().with_population(2);
        let ans = evaluate(
            &m,
            &[1, 1, 0],
            &Query::OneShot { edge: 0 },
            &ExactOptions::default(),
        )
        .unwrap();
        let h = 1.0;
        let p_i = 1.0 - (-h * 0.2f64).exp();
        let p_r = 1.0 - (-h * 0.3f64).exp();
        let expect = p_i / (p_i + (1.0 - p_i) * p_r);
        assert!((ans.value - expect).abs() < 1e-10, "{} vs {}", ans.value, expect);
    }

    #[test]
    fn one_shot_edge_cases() {
        let m = builtin_models().remove("sir").unwrap().with_population(3);
        // empty source: vacuously certain
        let ans = evaluate(
            &m,
            &[0, 3, 0],
            &Query::OneShot { edge: 0 },
            &ExactOptions::default(),
        )
        .unwrap();
        assert_eq!(ans.value, 1.0);
        // no infectious individuals: the edge can never fire
        let ans = evaluate(
            &m,
            &[3, 0, 0],
            &Query::OneShot { edge: 0 },
            &ExactOptions::default(),
        )
        .unwrap();
        assert!(ans.value.abs() < 1e-12);
        assert!(matches!(
            evaluate(&m, &[3, 0, 0], &Query::OneShot { edge: 9 }, &ExactOptions::default()),
            Err(ExactError::EdgeOutOfRange { .. })
        ));
    }

    #[test]
    fn reach_and_expected_steps() {
        let m = builtin_models().remove("sir").unwrap().with_population(2);
        let all_recovered = vec![0, 0, 2];
        let ans = evaluate(
            &m,
            &[1, 1, 0],
            &Query::Reach {
                target: all_recovered.clone(),
            },
            &ExactOptions::default(),
        )
        .unwrap();
        assert!(ans.value > 0.0 && ans.value < 1.0);
        let steps = evaluate(
            &m,
            &[1, 1, 0],
            &Query::ExpectedSteps {
                target: all_recovered,
            },
            &ExactOptions::default(),
        )
        .unwrap();
        // not almost surely reached: (1,0,1) is absorbing
        assert!(steps.infinite);
    }
}
