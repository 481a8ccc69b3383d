//! Statistical model checking by trajectory sampling: Okamoto-bound
//! sample sizes for probability queries and CLT stopping for expected
//! rewards. Every trajectory draws from its own counter-based RNG stream,
//! so results are reproducible and independent of the worker count.

use crate::exact::Query;
use crate::model::{CompartmentalModel, State};
use crate::semantics::SemanticsError;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-trajectory step cap; hitting it means the query does not absorb in
/// any reasonable time and the estimate would be meaningless.
pub const MAX_TRAJECTORY_STEPS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SamplingPlan {
    /// Confidence parameter: the CI misses the true value with
    /// probability at most `delta`.
    pub delta: f64,
    /// Total target width of the confidence interval.
    pub width: f64,
    pub seed: u64,
    /// Cap for CLT-style adaptive sampling.
    pub max_samples: u64,
    /// Fixed worker count (with the `parallel` feature); `None` uses the
    /// global thread pool. Results do not depend on this value.
    pub workers: Option<usize>,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            delta: 0.05,
            width: 0.01,
            seed: 0,
            max_samples: 100_000_000,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateResult {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: u64,
    /// "okamoto" for fixed-size probability estimation, "clt" for
    /// adaptive expected-reward estimation.
    pub method: String,
}

#[derive(Debug, Error)]
pub enum StatError {
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("sample cap of {cap} trajectories reached at CI width {width}")]
    SampleCapReached { cap: u64, width: f64 },
    #[error("trajectory exceeded {0} steps without resolving the query")]
    StepCapReached(u64),
    #[error("invalid sampling plan: {0}")]
    BadPlan(String),
    #[error("query references edge {edge}, model has {edges} edges")]
    EdgeOutOfRange { edge: usize, edges: usize },
}

/// Okamoto/Hoeffding sample count guaranteeing a CI of total width
/// `width` at confidence `1 - delta` for a Bernoulli mean.
pub fn okamoto_samples(delta: f64, width: f64) -> u64 {
    let half = width / 2.0;
    ((2.0 / delta).ln() / (2.0 * half * half)).ceil() as u64
}

// ---------------------------------------------------------------------
// Single-step sampling
// ---------------------------------------------------------------------

/// Draws from B(n, p) by walking the CDF for small n and delegating to
/// `rand_distr::Binomial` above 64 trials.
pub fn sample_binomial<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    if n <= 64 {
        let u: f64 = rng.gen();
        let mut cdf = 0.0;
        for k in 0..n {
            cdf += crate::semantics::binomial_pmf_unchecked(u64::from(k), u64::from(n), p);
            if u < cdf {
                return k;
            }
        }
        n
    } else {
        use rand_distr::Distribution;
        let d = rand_distr::Binomial::new(u64::from(n), p).expect("p checked above");
        d.sample(rng) as u32
    }
}

/// Outcome of one chain-binomial step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Next(State),
    Violation,
}

/// Samples all edge flows against frozen source counts, checks the
/// per-compartment budgets, and applies the flows.
pub fn sample_step<R: Rng + ?Sized>(
    model: &CompartmentalModel,
    state: &[u32],
    flows: &mut Vec<u32>,
    rng: &mut R,
) -> StepOutcome {
    flows.clear();
    for edge in &model.edges {
        let p = crate::semantics::success_probability(model, edge, state);
        flows.push(sample_binomial(state[edge.src], p, rng));
    }
    let mut next = state.to_vec();
    for (j, edge) in model.edges.iter().enumerate() {
        let f = flows[j];
        if next[edge.src] < f {
            return StepOutcome::Violation;
        }
        next[edge.src] -= f;
        next[edge.trg] += f;
    }
    StepOutcome::Next(next)
}

fn is_absorbing(model: &CompartmentalModel, state: &[u32]) -> bool {
    model.edges.iter().all(|e| {
        state[e.src] == 0 || crate::semantics::success_probability(model, e, state) <= 0.0
    })
}

// ---------------------------------------------------------------------
// Trajectory deciders
// ---------------------------------------------------------------------

/// Result of running one trajectory for some query: a Bernoulli outcome
/// or an integer reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryOutcome {
    Success,
    Failure,
    Reward(u64),
}

/// Simulates the query on one trajectory. The RNG should be dedicated to
/// this trajectory.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &CompartmentalModel,
    initial: &[u32],
    query: &Query,
    rng: &mut R,
) -> Result<TrajectoryOutcome, StatError> {
    let mut state = initial.to_vec();
    let mut flows: Vec<u32> = Vec::with_capacity(model.n_edges());
    match query {
        Query::PopInc => {
            for _ in 0..MAX_TRAJECTORY_STEPS {
                if model.is_epidemic_over(&state) {
                    return Ok(TrajectoryOutcome::Success);
                }
                match sample_step(model, &state, &mut flows, rng) {
                    StepOutcome::Next(s) => state = s,
                    StepOutcome::Violation => return Ok(TrajectoryOutcome::Failure),
                }
            }
        }
        Query::Eoe => {
            let mut steps = 0u64;
            loop {
                if model.is_epidemic_over(&state) {
                    return Ok(TrajectoryOutcome::Reward(steps));
                }
                if steps >= MAX_TRAJECTORY_STEPS {
                    break;
                }
                match sample_step(model, &state, &mut flows, rng) {
                    StepOutcome::Next(s) => state = s,
                    StepOutcome::Violation => return Ok(TrajectoryOutcome::Reward(steps + 1)),
                }
                steps += 1;
            }
        }
        Query::OneShot { edge } => {
            if *edge >= model.n_edges() {
                return Err(StatError::EdgeOutOfRange {
                    edge: *edge,
                    edges: model.n_edges(),
                });
            }
            let full = initial[model.edges[*edge].src];
            if full == 0 {
                return Ok(TrajectoryOutcome::Success);
            }
            for _ in 0..MAX_TRAJECTORY_STEPS {
                if is_absorbing(model, &state) {
                    return Ok(TrajectoryOutcome::Failure);
                }
                match sample_step(model, &state, &mut flows, rng) {
                    StepOutcome::Next(s) => {
                        let f = flows[*edge];
                        if f > 0 {
                            return Ok(if f == full {
                                TrajectoryOutcome::Success
                            } else {
                                TrajectoryOutcome::Failure
                            });
                        }
                        state = s;
                    }
                    StepOutcome::Violation => return Ok(TrajectoryOutcome::Failure),
                }
            }
        }
        Query::Reach { target } => {
            for _ in 0..MAX_TRAJECTORY_STEPS {
                if &state == target {
                    return Ok(TrajectoryOutcome::Success);
                }
                if is_absorbing(model, &state) {
                    return Ok(TrajectoryOutcome::Failure);
                }
                match sample_step(model, &state, &mut flows, rng) {
                    StepOutcome::Next(s) => state = s,
                    StepOutcome::Violation => return Ok(TrajectoryOutcome::Failure),
                }
            }
        }
        Query::ExpectedSteps { target } => {
            let mut steps = 0u64;
            loop {
                if &state == target {
                    return Ok(TrajectoryOutcome::Reward(steps));
                }
                if steps >= MAX_TRAJECTORY_STEPS || is_absorbing(model, &state) {
                    break;
                }
                match sample_step(model, &state, &mut flows, rng) {
                    StepOutcome::Next(s) => state = s,
                    StepOutcome::Violation => break,
                }
                steps += 1;
            }
            return Err(StatError::StepCapReached(MAX_TRAJECTORY_STEPS));
        }
    }
    Err(StatError::StepCapReached(MAX_TRAJECTORY_STEPS))
}

fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    {
        if let Some(w) = workers {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .expect("thread pool");
            return pool.install(f);
        }
    }
    let _ = workers;
    f()
}

// ---------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------

fn check_plan(plan: &SamplingPlan) -> Result<(), StatError> {
    if !(0.0 < plan.delta && plan.delta < 1.0) {
        return Err(StatError::BadPlan(format!("delta = {}", plan.delta)));
    }
    if plan.width <= 0.0 {
        return Err(StatError::BadPlan(format!("width = {}", plan.width)));
    }
    Ok(())
}

/// Estimates a probability query with the fixed Okamoto sample size.
pub fn estimate_probability(
    model: &CompartmentalModel,
    initial: &[u32],
    query: &Query,
    plan: &SamplingPlan,
) -> Result<EstimateResult, StatError> {
    check_plan(plan)?;
    let n = okamoto_samples(plan.delta, plan.width);
    let outcomes: Vec<Result<bool, StatError>> = with_pool(plan.workers, || {
        crate::par::map_range(n as usize, |i| {
            let mut rng = trajectory_rng(plan.seed, i as u64);
            match simulate_trajectory(model, initial, query, &mut rng)? {
                TrajectoryOutcome::Success => Ok(true),
                TrajectoryOutcome::Failure => Ok(false),
                TrajectoryOutcome::Reward(_) => Err(StatError::BadPlan(
                    "reward query passed to probability estimator".into(),
                )),
            }
        })
    });
    let mut successes = 0u64;
    for o in outcomes {
        if o? {
            successes += 1;
        }
    }
    let mean = successes as f64 / n as f64;
    let half = plan.width / 2.0;
    Ok(EstimateResult {
        mean,
        ci_low: (mean - half).max(0.0),
        ci_high: (mean + half).min(1.0),
        samples: n,
        method: "okamoto".into(),
    })
}

/// Estimates an expected-reward query, growing the sample until the
/// Student-t CI is narrower than the plan width.
pub fn estimate_expected_reward(
    model: &CompartmentalModel,
    initial: &[u32],
    query: &Query,
    plan: &SamplingPlan,
) -> Result<EstimateResult, StatError> {
    check_plan(plan)?;
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let mut sum: u128 = 0;
    let mut sum_sq: u128 = 0;
    let mut n: u64 = 0;
    let mut batch: u64 = 4096;
    loop {
        let take = batch.min(plan.max_samples - n);
        let rewards: Vec<Result<u64, StatError>> = with_pool(plan.workers, || {
            crate::par::map_range(take as usize, |i| {
                let mut rng = trajectory_rng(plan.seed, n + i as u64);
                match simulate_trajectory(model, initial, query, &mut rng)? {
                    TrajectoryOutcome::Reward(r) => Ok(r),
                    _ => Err(StatError::BadPlan(
                        "probability query passed to reward estimator".into(),
                    )),
                }
            })
        });
        for r in rewards {
            let r = r?;
            sum += u128::from(r);
            sum_sq += u128::from(r) * u128::from(r);
        }
        n += take;
        let mean = sum as f64 / n as f64;
        let var = if n > 1 {
            (sum_sq as f64 - n as f64 * mean * mean) / (n as f64 - 1.0)
        } else {
            f64::INFINITY
        };
        let half = if n > 1 && var.is_finite() {
            let t = StudentsT::new(0.0, 1.0, n as f64 - 1.0)
                .expect("valid dof")
                .inverse_cdf(1.0 - plan.delta / 2.0);
            t * (var / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        if half * 2.0 <= plan.width && n >= 2 {
            return Ok(EstimateResult {
                mean,
                ci_low: mean - half,
                ci_high: mean + half,
                samples: n,
                method: "clt".into(),
            });
        }
        if n >= plan.max_samples {
            return Err(StatError::SampleCapReached {
                cap: plan.max_samples,
                width: half * 2.0,
            });
        }
        batch = batch.saturating_mul(2);
    }
}

/// Dispatches to the probability or reward estimator based on the query.
pub fn estimate(
    model: &CompartmentalModel,
    initial: &[u32],
    query: &Query,
    plan: &SamplingPlan,
) -> Result<EstimateResult, StatError> {
    match query {
        Query::Eoe | Query::ExpectedSteps { .. } => {
            estimate_expected_reward(model, initial, query, plan)
        }
        _ => estimate_probability(model, initial, query, plan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{evaluate, ExactOptions};
    use crate::model::builtin_models;

    #[test]
    fn okamoto_sample_size() {
        assert_eq!(okamoto_samples(0.05, 0.01), 73778);
        assert_eq!(okamoto_samples(0.01, 0.1), 1060);
    }

    #[test]
    fn binomial_sampler_mean() {
        let mut rng = trajectory_rng(7, 0);
        let n = 20_000;
        let total: u64 = (0..n).map(|_| u64::from(sample_binomial(10, 0.3, &mut rng))).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 3.0).abs() < 0.05, "mean {}", mean);
    }

    #[test]
    fn binomial_sampler_large_n() {
        let mut rng = trajectory_rng(7, 1);
        let n = 5_000;
        let total: u64 = (0..n).map(|_| u64::from(sample_binomial(1000, 0.25, &mut rng))).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 250.0).abs() < 1.0, "mean {}", mean);
    }

    #[test]
    fn popinc_estimate_matches_exact() {
        let m = builtin_models().remove("covid_be").unwrap().with_population(3);
        let init = [0, 0, 0, 1, 1, 1, 0, 0, 0, 0];
        let exact = evaluate(&m, &init, &Query::PopInc, &ExactOptions::default()).unwrap();
        let plan = SamplingPlan {
            width: 0.02,
            seed: 42,
            ..SamplingPlan::default()
        };
        let est = estimate(&m, &init, &Query::PopInc, &plan).unwrap();
        assert_eq!(est.method, "okamoto");
        assert!(
            est.ci_low <= exact.value && exact.value <= est.ci_high,
            "[{}, {}] misses {}",
            est.ci_low,
            est.ci_high,
            exact.value
        );
    }

    #[test]
    fn eoe_estimate_matches_exact() {
        let m = builtin_models().remove("sir").unwrap();
        let init = [8, 2, 0];
        let exact = evaluate(&m, &init, &Query::Eoe, &ExactOptions::default()).unwrap();
        let plan = SamplingPlan {
            width: 0.2,
            seed: 11,
            ..SamplingPlan::default()
        };
        let est = estimate(&m, &init, &Query::Eoe, &plan).unwrap();
        assert_eq!(est.method, "clt");
        assert!(
            est.ci_low <= exact.value && exact.value <= est.ci_high,
            "[{}, {}] misses {}",
            est.ci_low,
            est.ci_high,
            exact.value
        );
    }

    #[test]
    fn one_shot_estimate_matches_exact() {
        let m = builtin_models().remove("sir").unwrap().with_population(2);
        let init = [1, 1, 0];
        let exact = evaluate(&m, &init, &Query::OneShot { edge: 0 }, &ExactOptions::default())
            .unwrap();
        let plan = SamplingPlan {
            width: 0.02,
            seed: 3,
            ..SamplingPlan::default()
        };
        let est = estimate(&m, &init, &Query::OneShot { edge: 0 }, &plan).unwrap();
        assert!(est.ci_low <= exact.value && exact.value <= est.ci_high);
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let m = builtin_models().remove("covid_be").unwrap().with_population(2);
        let init = [0, 0, 1, 0, 1, 0, 0, 0, 0, 0];
        let plan = SamplingPlan {
            width: 0.05,
            seed: 9,
            ..SamplingPlan::default()
        };
        let a = estimate(&m, &init, &Query::PopInc, &plan).unwrap();
        let b = estimate(&m, &init, &Query::PopInc, &plan).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.samples, b.samples);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn worker_count_does_not_change_results() {
        let m = builtin_models().remove("covid_be").unwrap().with_population(2);
        let init = [0, 0, 1, 0, 1, 0, 0, 0, 0, 0];
        let mut means = Vec::new();
        for workers in [1, 2, 4] {
            let plan = SamplingPlan {
                width: 0.05,
                seed: 9,
                workers: Some(workers),
                ..SamplingPlan::default()
            };
            means.push(estimate(&m, &init, &Query::PopInc, &plan).unwrap().mean);
        }
        assert_eq!(means[0], means[1]);
        assert_eq!(means[1], means[2]);
    }

    #[test]
    fn bad_plans_rejected() {
        let m = builtin_models().remove("sir").unwrap();
        let plan = SamplingPlan {
            delta: 0.0,
            ..SamplingPlan::default()
        };
        assert!(matches!(
            estimate(&m, &[9, 1, 0], &Query::PopInc, &plan),
            Err(StatError::BadPlan(_))
        ));
    }
}
