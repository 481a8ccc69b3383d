//! Chain-binomial single-step semantics: per-edge success probabilities,
//! flow-realization enumeration, successor distributions with an explicit
//! violation sink, and explicit reachable-chain construction.

use crate::chain::MarkovChain;
use crate::model::{CompartmentalModel, Edge, EdgeLabel, FlowRealization, State};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("state space exceeded {0} states")]
    StateSpaceExceeded(usize),
}

/// Default cap on explicit state spaces; override per call or through the
/// CLI / `INFORM_MAX_STATES`.
pub const DEFAULT_MAX_STATES: usize = 5_000_000;

// ---------------------------------------------------------------------
// Binomial pmf
// ---------------------------------------------------------------------

fn ln_choose(n: u64, k: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma((n + 1) as f64) - ln_gamma((k + 1) as f64) - ln_gamma((n - k + 1) as f64)
}

fn choose_f64(n: u64, k: u64) -> f64 {
    let k = k.min(n - k.min(n));
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c
}

pub(crate) fn binomial_pmf_unchecked(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    if n == 0 {
        return 1.0;
    }
    if n <= 30 {
        choose_f64(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
    } else {
        (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (-p).ln_1p()).exp()
    }
}

/// Probability of `k` successes among `n` independent trials with success
/// probability `p`. Log-space evaluation above n = 30.
pub fn binomial_pmf(k: u64, n: u64, p: f64) -> Result<f64, SemanticsError> {
    if k > n {
        return Err(SemanticsError::Domain(format!("k = {} exceeds n = {}", k, n)));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(SemanticsError::Domain(format!("p = {} outside [0, 1]", p)));
    }
    Ok(binomial_pmf_unchecked(k, n, p))
}

// ---------------------------------------------------------------------
// Per-edge success probabilities
// ---------------------------------------------------------------------

/// Per-step success probability of `edge` in `state`:
/// constant rate v maps to 1 - exp(-h v); a dependent vector maps to
/// 1 - prod_k exp(-h * s_k * v_k).
pub fn success_probability(model: &CompartmentalModel, edge: &Edge, state: &[u32]) -> f64 {
    let h = model.h.to_f64();
    match &edge.label {
        EdgeLabel::Constant(v) => -(-h * v.to_f64()).exp_m1(),
        EdgeLabel::Dependent(v) => {
            let exponent: f64 = v
                .iter()
                .map(|(k, vk)| state[*k] as f64 * vk.to_f64())
                .sum();
            -(-h * exponent).exp_m1()
        }
    }
}

pub(crate) fn edge_probabilities(model: &CompartmentalModel, state: &[u32]) -> Vec<f64> {
    model
        .edges
        .iter()
        .map(|e| success_probability(model, e, state))
        .collect()
}

// ---------------------------------------------------------------------
// Flow enumeration
// ---------------------------------------------------------------------

/// Calls `visit(r, prob)` for every flow realization r with r_i within
/// the per-edge binomial support and B r <= s, where prob is the joint
/// probability of independently sampling r. The enumeration order is
/// lexicographic in edge order.
fn for_each_feasible_flow<F: FnMut(&[u32], f64)>(
    model: &CompartmentalModel,
    state: &[u32],
    probs: &[f64],
    visit: &mut F,
) {
    let m = model.edges.len();
    // pmf tables per edge over the source count at step start
    let tables: Vec<Vec<f64>> = model
        .edges
        .iter()
        .zip(probs)
        .map(|(e, &p)| {
            let n = state[e.src] as u64;
            (0..=n).map(|k| binomial_pmf_unchecked(k, n, p)).collect()
        })
        .collect();
    let mut r = vec![0u32; m];
    let mut remaining: Vec<u32> = state.to_vec();

    fn rec<F: FnMut(&[u32], f64)>(
        model: &CompartmentalModel,
        tables: &[Vec<f64>],
        j: usize,
        prob: f64,
        r: &mut [u32],
        remaining: &mut [u32],
        visit: &mut F,
    ) {
        if j == r.len() {
            visit(r, prob);
            return;
        }
        let src = model.edges[j].src;
        let budget = remaining[src];
        for k in 0..=budget {
            let factor = tables[j][k as usize];
            if factor == 0.0 {
                continue;
            }
            r[j] = k;
            remaining[src] = budget - k;
            rec(model, tables, j + 1, prob * factor, r, remaining, visit);
        }
        r[j] = 0;
        remaining[src] = budget;
    }
    rec(model, &tables, 0, 1.0, &mut r, &mut remaining, visit);
}

fn apply_flow(model: &CompartmentalModel, state: &[u32], r: &[u32]) -> State {
    let mut next = state.to_vec();
    for (j, e) in model.edges.iter().enumerate() {
        next[e.src] -= r[j];
        next[e.trg] += r[j];
    }
    next
}

/// All flow realizations witnessing `s -> s_next`: natural solutions of
/// A r = s_next - s with r >= 0 and B r <= s, in lexicographic order.
/// Population-changing pairs have no witnesses.
pub fn enumerate_witnesses(
    model: &CompartmentalModel,
    s: &[u32],
    s_next: &[u32],
) -> Vec<FlowRealization> {
    let total: u64 = s.iter().map(|&x| x as u64).sum();
    let total_next: u64 = s_next.iter().map(|&x| x as u64).sum();
    if total != total_next {
        return Vec::new();
    }
    let probs = vec![0.5; model.edges.len()]; // enumeration only; any interior p keeps all pmf entries nonzero
    let mut out = Vec::new();
    for_each_feasible_flow(model, s, &probs, &mut |r, _| {
        if apply_flow(model, s, r) == s_next {
            out.push(r.to_vec());
        }
    });
    out
}

/// Joint probability of independently drawing the per-edge flows `r`
/// from state `s`: prod_i Pr(r_i; s_src(i), p_i).
pub fn flow_probability(
    model: &CompartmentalModel,
    s: &[u32],
    r: &[u32],
) -> Result<f64, SemanticsError> {
    if r.len() != model.edges.len() {
        return Err(SemanticsError::Domain("flow dimension mismatch".into()));
    }
    let probs = edge_probabilities(model, s);
    let mut prob = 1.0;
    for (j, e) in model.edges.iter().enumerate() {
        let n = s[e.src] as u64;
        if r[j] as u64 > n {
            return Err(SemanticsError::Domain(format!(
                "flow {} on edge {} exceeds source count {}",
                r[j], j, n
            )));
        }
        prob *= binomial_pmf_unchecked(r[j] as u64, n, probs[j]);
    }
    Ok(prob)
}

// ---------------------------------------------------------------------
// Successor distributions
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SuccessorDistribution {
    pub entries: BTreeMap<State, f64>,
    /// Probability that independently sampled edge flows overdraw some
    /// compartment; routed to the absorbing violation sink.
    pub violation_mass: f64,
}

pub fn successor_distribution(
    model: &CompartmentalModel,
    state: &[u32],
) -> SuccessorDistribution {
    let probs = edge_probabilities(model, state);
    let mut entries: BTreeMap<State, f64> = BTreeMap::new();
    let mut mass = 0.0;
    for_each_feasible_flow(model, state, &probs, &mut |r, prob| {
        *entries.entry(apply_flow(model, state, r)).or_insert(0.0) += prob;
        mass += prob;
    });
    SuccessorDistribution {
        entries,
        violation_mass: (1.0 - mass).max(0.0),
    }
}

/// Like [`successor_distribution`] but keyed additionally by the flow on
/// `edge`, for properties about a single edge's first firing.
pub fn successor_distribution_tracking_edge(
    model: &CompartmentalModel,
    state: &[u32],
    edge: usize,
) -> (BTreeMap<(u32, State), f64>, f64) {
    let probs = edge_probabilities(model, state);
    let mut entries: BTreeMap<(u32, State), f64> = BTreeMap::new();
    let mut mass = 0.0;
    for_each_feasible_flow(model, state, &probs, &mut |r, prob| {
        *entries
            .entry((r[edge], apply_flow(model, state, r)))
            .or_insert(0.0) += prob;
        mass += prob;
    });
    (entries, (1.0 - mass).max(0.0))
}

// ---------------------------------------------------------------------
// Explicit chain construction
// ---------------------------------------------------------------------

/// Breadth-first closure of [`successor_distribution`] from `initial`.
/// State indexing is BFS discovery order; the violation sink is appended
/// last (even when unreachable) with key `[]`.
pub fn build_markov_chain(
    model: &CompartmentalModel,
    initial: &[u32],
    max_states: usize,
) -> Result<MarkovChain, SemanticsError> {
    let total: u64 = initial.iter().map(|&x| x as u64).sum();
    if total != model.pop as u64 {
        return Err(SemanticsError::Domain(format!(
            "initial state has population {}, model expects {}",
            total, model.pop
        )));
    }
    if initial.len() != model.compartments.len() {
        return Err(SemanticsError::Domain("initial state dimension mismatch".into()));
    }

    let mut index: HashMap<State, u32> = HashMap::new();
    let mut states: Vec<State> = vec![initial.to_vec()];
    index.insert(initial.to_vec(), 0);
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut violation_edges: Vec<(usize, f64)> = Vec::new();

    let mut frontier: Vec<usize> = vec![0];
    while !frontier.is_empty() {
        let dists: Vec<SuccessorDistribution> = crate::par::map_indices(&frontier, |&i| {
            successor_distribution(model, &states[i])
        });
        let mut next_frontier = Vec::new();
        for (&si, dist) in frontier.iter().zip(dists) {
            debug_assert_eq!(si, rows.len());
            let mut row: Vec<(u32, f64)> = Vec::with_capacity(dist.entries.len() + 1);
            for (succ, p) in dist.entries {
                let idx = match index.get(&succ) {
                    Some(&i) => i,
                    None => {
                        let i = states.len() as u32;
                        if states.len() >= max_states {
                            return Err(SemanticsError::StateSpaceExceeded(max_states));
                        }
                        index.insert(succ.clone(), i);
                        states.push(succ);
                        next_frontier.push(i as usize);
                        i
                    }
                };
                row.push((idx, p));
            }
            if dist.violation_mass > 0.0 {
                violation_edges.push((si, dist.violation_mass));
            }
            row.sort_unstable_by_key(|&(i, _)| i);
            rows.push(row);
        }
        frontier = next_frontier;
    }

    // violation sink appended last
    let violation = states.len();
    states.push(Vec::new());
    for (s, mass) in violation_edges {
        rows[s].push((violation as u32, mass));
    }
    rows.push(vec![(violation as u32, 1.0)]);
    let row_reward = vec![1.0; states.len()];

    Ok(MarkovChain {
        states,
        rows,
        row_reward,
        initial: 0,
        violation: Some(violation),
    })
}

// ---------------------------------------------------------------------
// SIR closed-form oracle
// ---------------------------------------------------------------------

/// Closed-form one-step transition probability of the time-discretized
/// SIR chain; used as an independent oracle against
/// [`successor_distribution`].
pub fn sir_closed_form(
    m: &[u32],
    n: &[u32],
    beta: f64,
    gamma: f64,
    h: f64,
) -> Result<f64, SemanticsError> {
    if m.len() != 3 || n.len() != 3 {
        return Err(SemanticsError::Domain("states must have 3 compartments".into()));
    }
    if m == n {
        return Err(SemanticsError::Domain("states must differ".into()));
    }
    if n[0] > m[0] {
        return Err(SemanticsError::Domain("susceptibles cannot increase".into()));
    }
    if n[2] < m[2] || n[2] > m[1] + m[2] {
        return Err(SemanticsError::Domain("recovered out of range".into()));
    }
    let (m1, m2, m3) = (m[0] as u64, m[1] as u64, m[2] as u64);
    let (n1, n3) = (n[0] as u64, n[2] as u64);
    let esc_inf = (-h * beta * m2 as f64).exp();
    let esc_rec = (-h * gamma).exp();
    let infections = m1 - n1;
    let recoveries = n3 - m3;
    Ok(choose_f64(m1, infections)
        * esc_inf.powi(n1 as i32)
        * (1.0 - esc_inf).powi(infections as i32)
        * choose_f64(m2, recoveries)
        * (1.0 - esc_rec).powi(recoveries as i32)
        * esc_rec.powi((m2 - recoveries) as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_models, covid_be, CompartmentalModel, Edge, EdgeLabel};
    use crate::rational::Rational;

    fn dec(s: &str) -> Rational {
        Rational::parse_decimal(s).unwrap()
    }

    #[test]
    fn pmf_basics() {
        assert!((binomial_pmf(2, 3, 0.5).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(binomial_pmf(0, 0, 0.7).unwrap(), 1.0);
        assert!(binomial_pmf(4, 3, 0.5).is_err());
        assert!(binomial_pmf(1, 3, 1.5).is_err());
    }

    #[test]
    fn pmf_matches_exact_rational_evaluation() {
        // C(10,5) * (123/1000)^5 * (877/1000)^5
        let p = 0.123f64;
        let exact = 252.0 * p.powi(5) * (1.0 - p).powi(5);
        let got = binomial_pmf(5, 10, p).unwrap();
        assert!((got - exact).abs() / exact < 1e-13);
    }

    #[test]
    fn covid_edge_probabilities_match_reference_table() {
        let m = covid_be();
        let state = vec![0u32; 10];
        // (edge index, reference probability)
        let table = [
            (1, 0.0299183153),
            (2, 0.0164875673),
            (3, 0.0031616581),
            (4, 0.0099501663),
            (5, 0.0305205490),
            (6, 0.0005038730),
            (7, 0.0030889693),
            (8, 0.0010307184),
            (9, 0.0076404538),
            (10, 0.0000385409),
            (11, 0.0076404538),
            (12, 0.0000385409),
        ];
        for (j, expected) in table {
            let p = success_probability(&m, &m.edges[j], &state);
            assert!(
                (p - expected).abs() < 1e-9,
                "edge {}: {} vs {}",
                j,
                p,
                expected
            );
        }
    }

    #[test]
    fn covid_lambda_probability() {
        let m = covid_be();
        // I_presym + I_asym = 1, I_mild + I_sev = 0
        let mut state = vec![0u32; 10];
        state[2] = 1;
        let p = success_probability(&m, &m.edges[0], &state);
        assert!((p - 0.0127949398).abs() < 1e-8);

        // all referenced compartments zero => probability zero
        let zero = vec![0u32; 10];
        assert_eq!(success_probability(&m, &m.edges[0], &zero), 0.0);
    }

    #[test]
    fn witnesses_single_edge() {
        let m = CompartmentalModel {
            name: "t".into(),
            compartments: vec!["a".into(), "b".into()],
            edges: vec![Edge {
                src: 0,
                trg: 1,
                label: EdgeLabel::Constant(dec("0.5")),
            }],
            pop: 2,
            h: dec("1"),
            terminal: 1,
            infectious_set: vec![],
        };
        assert_eq!(enumerate_witnesses(&m, &[2, 0], &[1, 1]), vec![vec![1]]);
    }

    #[test]
    fn witnesses_three_cycle() {
        // c0 -> c1 -> c2 -> c0, third edge dependent on c1
        let m = CompartmentalModel {
            name: "cycle".into(),
            compartments: vec!["c0".into(), "c1".into(), "c2".into()],
            edges: vec![
                Edge {
                    src: 0,
                    trg: 1,
                    label: EdgeLabel::Constant(dec("0.2")),
                },
                Edge {
                    src: 1,
                    trg: 2,
                    label: EdgeLabel::Constant(dec("0.5")),
                },
                Edge {
                    src: 2,
                    trg: 0,
                    label: EdgeLabel::Dependent(vec![(1, dec("0.3"))]),
                },
            ],
            pop: 10,
            h: dec("1"),
            terminal: 2,
            infectious_set: vec![],
        };
        let ws = enumerate_witnesses(&m, &[5, 3, 2], &[2, 4, 4]);
        assert_eq!(ws, vec![vec![3, 2, 0], vec![4, 3, 1]]);
    }

    #[test]
    fn witnesses_empty_state() {
        let m = builtin_models().remove("sir").unwrap();
        let ws = enumerate_witnesses(&m, &[0, 0, 0], &[0, 0, 0]);
        assert_eq!(ws, vec![vec![0, 0]]);
        // population-changing pair has no witnesses
        assert!(enumerate_witnesses(&m, &[1, 0, 0], &[0, 0, 0]).is_empty());
    }

    #[test]
    fn successor_distribution_normalizes() {
        let m = covid_be().with_population(4);
        let dist = successor_distribution(&m, &[2, 0, 0, 1, 1, 0, 0, 0, 0, 0]);
        let total: f64 = dist.entries.values().sum::<f64>() + dist.violation_mass;
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absorbing_state_is_point_mass() {
        let m = builtin_models().remove("sir").unwrap();
        let dist = successor_distribution(&m, &[0, 0, 10]);
        assert_eq!(dist.entries.len(), 1);
        assert_eq!(dist.entries[&vec![0, 0, 10]], 1.0);
        assert_eq!(dist.violation_mass, 0.0);
    }

    #[test]
    fn violation_mass_two_outgoing_edges() {
        // I_presym = 1 has two outgoing edges; violation iff both fire.
        let m = covid_be().with_population(1);
        let mut state = vec![0u32; 10];
        state[2] = 1;
        let dist = successor_distribution(&m, &state);
        let p1 = success_probability(&m, &m.edges[2], &state);
        let p2 = success_probability(&m, &m.edges[3], &state);
        assert!((dist.violation_mass - p1 * p2).abs() < 1e-15);
    }

    #[test]
    fn sir_chain_pop_2_has_six_states() {
        let m = builtin_models().remove("sir").unwrap().with_population(2);
        let chain = build_markov_chain(&m, &[1, 1, 0], 1000).unwrap();
        // reachable: (1,1,0) (0,2,0) (1,0,1) (0,1,1) (0,0,2), plus the sink
        assert_eq!(chain.n_states(), 5 + 1);
        assert!(chain.max_row_defect() < 1e-12);
    }

    #[test]
    fn wrong_population_rejected() {
        let m = builtin_models().remove("sir").unwrap();
        assert!(matches!(
            build_markov_chain(&m, &[1, 1, 0], 1000),
            Err(SemanticsError::Domain(_))
        ));
    }

    #[test]
    fn closed_form_matches_one_step() {
        // beta = 0.4, gamma = 0.5, h = 1 variant of the SIR model
        let m = CompartmentalModel {
            name: "sir45".into(),
            compartments: vec!["S".into(), "I".into(), "R".into()],
            edges: vec![
                Edge {
                    src: 0,
                    trg: 1,
                    label: EdgeLabel::Dependent(vec![(1, dec("0.4"))]),
                },
                Edge {
                    src: 1,
                    trg: 2,
                    label: EdgeLabel::Constant(dec("0.5")),
                },
            ],
            pop: 3,
            h: dec("1"),
            terminal: 2,
            infectious_set: vec![1],
        };
        let dist = successor_distribution(&m, &[2, 1, 0]);
        let got = dist.entries[&vec![1, 1, 1]];
        let oracle = sir_closed_form(&[2, 1, 0], &[1, 1, 1], 0.4, 0.5, 1.0).unwrap();
        assert!((got - oracle).abs() < 1e-14);
    }

    #[test]
    fn closed_form_edge_cases() {
        // no infectious individuals: susceptibles cannot move
        let p = sir_closed_form(&[3, 0, 0], &[2, 1, 0], 0.4, 0.5, 1.0).unwrap();
        assert_eq!(p, 0.0);
        // pure recovery binomial
        let h = 1.0;
        let gamma = 0.5f64;
        let p = sir_closed_form(&[0, 2, 0], &[0, 1, 1], 0.4, gamma, h).unwrap();
        let expect = 2.0 * (1.0 - (-h * gamma).exp()) * (-h * gamma).exp();
        assert!((p - expect).abs() < 1e-15);
        // side conditions rejected
        assert!(sir_closed_form(&[1, 1, 0], &[2, 0, 0], 0.4, 0.5, 1.0).is_err());
        assert!(sir_closed_form(&[1, 1, 0], &[1, 1, 0], 0.4, 0.5, 1.0).is_err());
    }
}
