//! Stochastic counter machines: control states over integer counters with
//! linear guards, affine updates and probabilistic branching, plus the
//! translation from compartmental models and bounded expansion back to an
//! explicit chain.

use crate::chain::MarkovChain;
use crate::model::{CompartmentalModel, EdgeLabel, State};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

/// One linear inequality `sum(coeff * counter) <= bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coeffs: Vec<(usize, i64)>,
    pub bound: i64,
}

/// Conjunction of linear constraints; empty means `true`.
pub type Guard = Vec<LinearConstraint>;

/// Simultaneous affine assignment `target := sum(coeff * counter) + constant`.
/// Counters without an entry keep their value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterUpdate {
    pub target: usize,
    pub terms: Vec<(usize, i64)>,
    pub constant: i64,
}

pub type Update = Vec<CounterUpdate>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub prob: f64,
    pub update: Update,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmTransition {
    pub from: usize,
    pub guard: Guard,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scm {
    pub name: String,
    pub counter_names: Vec<String>,
    pub control_names: Vec<String>,
    pub transitions: Vec<ScmTransition>,
    /// Loop head; one pass through it corresponds to one model time-step.
    pub loop_head: usize,
    /// Control state where per-step flows sit in the edge buffers, just
    /// before they are applied.
    pub commit: usize,
    /// Absorbing violation control state (always the highest index).
    pub violation: usize,
    /// Upper bound used for counter ranges in emitted model files.
    pub counter_bound: u32,
    /// Counter index of each model edge's flow buffer.
    pub edge_buffers: Vec<usize>,
    /// Number of leading counters that mirror model compartments.
    pub n_compartments: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error("control state {control} has no enabled transition for counters {counters:?}")]
    Stuck { control: usize, counters: Vec<i64> },
    #[error("control state {control} has {enabled} simultaneously enabled transitions")]
    Nondeterministic { control: usize, enabled: usize },
    #[error("counter {counter} driven negative in control state {control}")]
    NegativeCounter { control: usize, counter: usize },
    #[error("state space exceeded {0} states")]
    StateSpaceExceeded(usize),
    #[error("branch probabilities of a transition from {control} sum to {sum}")]
    BranchProbSum { control: usize, sum: f64 },
    #[error("cannot prove guards disjoint for two transitions from control state {0}")]
    GuardOverlap(usize),
    #[error("{0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------
// Guard and update evaluation
// ---------------------------------------------------------------------

pub fn guard_satisfied(guard: &Guard, counters: &[i64]) -> bool {
    guard.iter().all(|c| {
        c.coeffs
            .iter()
            .map(|&(i, a)| a * counters[i])
            .sum::<i64>()
            <= c.bound
    })
}

pub fn apply_update(update: &Update, counters: &[i64]) -> Vec<i64> {
    let mut next = counters.to_vec();
    for u in update {
        next[u.target] =
            u.terms.iter().map(|&(i, a)| a * counters[i]).sum::<i64>() + u.constant;
    }
    next
}

// ---------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------

fn ge1(counter: usize) -> Guard {
    // counter >= 1  <=>  -counter <= -1
    vec![LinearConstraint {
        coeffs: vec![(counter, -1)],
        bound: -1,
    }]
}

fn le0(counter: usize) -> Guard {
    vec![LinearConstraint {
        coeffs: vec![(counter, 1)],
        bound: 0,
    }]
}

/// Builds updates out of relative deltas and transfers.
#[derive(Default)]
struct UpdateBuilder {
    // counter -> (terms over *old* values, constant); identity entries are
    // added lazily.
    parts: BTreeMap<usize, (Vec<(usize, i64)>, i64)>,
}

impl UpdateBuilder {
    fn entry(&mut self, target: usize) -> &mut (Vec<(usize, i64)>, i64) {
        self.parts
            .entry(target)
            .or_insert_with(|| (vec![(target, 1)], 0))
    }

    fn add(mut self, target: usize, delta: i64) -> Self {
        self.entry(target).1 += delta;
        self
    }

    /// target += source; source := 0.
    fn drain_into(mut self, source: usize, target: usize) -> Self {
        self.entry(target).0.push((source, 1));
        let e = self.entry(source);
        e.0.retain(|&(i, _)| i != source);
        self
    }

    fn zero(mut self, target: usize) -> Self {
        let e = self.entry(target);
        e.0.clear();
        e.1 = 0;
        self
    }

    fn build(self) -> Update {
        self.parts
            .into_iter()
            .map(|(target, (terms, constant))| CounterUpdate {
                target,
                terms,
                constant,
            })
            .collect()
    }
}

fn upd() -> UpdateBuilder {
    UpdateBuilder::default()
}

// ---------------------------------------------------------------------
// Gadgets
// ---------------------------------------------------------------------

/// Binomial sampling gadget over counters `[n, a, b]`: repeatedly moves an
/// individual from `n` to `a`, incrementing `b` with probability `p`; once
/// `n` is exhausted it restores `n` from `a` and halts. Control states:
/// 0 = loop, 1 = done, with `b` then distributed as B(n_init, p).
pub fn binomial_gadget(p: f64) -> Scm {
    let (n, a, b) = (0, 1, 2);
    Scm {
        name: "binomial".into(),
        counter_names: vec!["n".into(), "a".into(), "b".into()],
        control_names: vec!["loop".into(), "done".into(), "viol".into()],
        transitions: vec![
            ScmTransition {
                from: 0,
                guard: ge1(n),
                branches: vec![
                    Branch {
                        prob: p,
                        update: upd().add(n, -1).add(a, 1).add(b, 1).build(),
                        to: 0,
                    },
                    Branch {
                        prob: 1.0 - p,
                        update: upd().add(n, -1).add(a, 1).build(),
                        to: 0,
                    },
                ],
            },
            ScmTransition {
                from: 0,
                guard: le0(n),
                branches: vec![Branch {
                    prob: 1.0,
                    update: upd().drain_into(a, n).build(),
                    to: 1,
                }],
            },
            ScmTransition {
                from: 1,
                guard: Vec::new(),
                branches: vec![Branch {
                    prob: 1.0,
                    update: Vec::new(),
                    to: 1,
                }],
            },
        ],
        loop_head: 0,
        commit: 1,
        violation: 2,
        counter_bound: u32::MAX,
        edge_buffers: vec![b],
        n_compartments: 1,
    }
}

/// Parameterized Bernoulli gadget: one trial that succeeds with
/// probability `1 - prod_k factors[k].1 ^ c[factors[k].0]`, realized as a
/// chain of survival sweeps sharing scratch counter `a`. Counters are the
/// swept counters followed by `a` and a success flag `s`; control 0 is the
/// entry, the final state is `done`.
pub fn param_bernoulli_gadget(factors: &[f64]) -> Scm {
    let k = factors.len();
    let a = k;
    let s = k + 1;
    let mut names: Vec<String> = (0..k).map(|i| format!("c{}", i)).collect();
    names.push("a".into());
    names.push("s".into());
    // control states: alive_0..alive_{k-1}, dead_0..dead_{k-1}, done, viol
    let alive = |i: usize| i;
    let dead = |i: usize| k + i;
    let done = 2 * k;
    let viol = 2 * k + 1;
    let mut transitions = Vec::new();
    for (i, &f) in factors.iter().enumerate() {
        let next_alive = if i + 1 < k { alive(i + 1) } else { done };
        let next_dead = if i + 1 < k { dead(i + 1) } else { done };
        transitions.push(ScmTransition {
            from: alive(i),
            guard: ge1(i),
            branches: vec![
                Branch {
                    prob: f,
                    update: upd().add(i, -1).add(a, 1).build(),
                    to: alive(i),
                },
                Branch {
                    prob: 1.0 - f,
                    update: upd().add(i, -1).add(a, 1).build(),
                    to: dead(i),
                },
            ],
        });
        transitions.push(ScmTransition {
            from: alive(i),
            guard: le0(i),
            branches: vec![Branch {
                prob: 1.0,
                update: upd().drain_into(a, i).build(),
                to: next_alive,
            }],
        });
        transitions.push(ScmTransition {
            from: dead(i),
            guard: ge1(i),
            branches: vec![Branch {
                prob: 1.0,
                update: upd().add(i, -1).add(a, 1).build(),
                to: dead(i),
            }],
        });
        transitions.push(ScmTransition {
            from: dead(i),
            guard: le0(i),
            branches: vec![Branch {
                prob: 1.0,
                update: if i + 1 < k {
                    upd().drain_into(a, i).build()
                } else {
                    upd().drain_into(a, i).add(s, 1).build()
                },
                to: next_dead,
            }],
        });
    }
    transitions.push(ScmTransition {
        from: done,
        guard: Vec::new(),
        branches: vec![Branch {
            prob: 1.0,
            update: Vec::new(),
            to: done,
        }],
    });
    let mut control_names: Vec<String> = (0..k).map(|i| format!("s{}", i)).collect();
    control_names.extend((0..k).map(|i| format!("s{}_hit", i)));
    control_names.push("done".into());
    control_names.push("viol".into());
    Scm {
        name: "param_bernoulli".into(),
        counter_names: names,
        control_names,
        transitions,
        loop_head: 0,
        commit: done,
        violation: viol,
        counter_bound: u32::MAX,
        edge_buffers: vec![s],
        n_compartments: k,
    }
}

/// Parameterized binomial gadget: `b ~ B(n_init, 1 - prod_k f_k^{c_k})`,
/// a binomial loop over `n` whose per-trial success probability comes from
/// survival sweeps over the dependency counters. Counters: `n`, the `k`
/// dependency counters, `a0`, `a1`, `b`.
pub fn param_binomial_gadget(factors: &[f64]) -> Scm {
    let k = factors.len();
    let n = 0;
    let dep = |i: usize| 1 + i;
    let a0 = 1 + k;
    let a1 = 2 + k;
    let b = 3 + k;
    let entry = 0;
    let alive = |i: usize| 1 + i;
    let dead = |i: usize| 1 + k + i;
    let done = 1 + 2 * k;
    let viol = 2 + 2 * k;
    let mut transitions = vec![
        ScmTransition {
            from: entry,
            guard: ge1(n),
            branches: vec![Branch {
                prob: 1.0,
                update: Vec::new(),
                to: alive(0),
            }],
        },
        ScmTransition {
            from: entry,
            guard: le0(n),
            branches: vec![Branch {
                prob: 1.0,
                update: upd().drain_into(a0, n).build(),
                to: done,
            }],
        },
    ];
    for (i, &f) in factors.iter().enumerate() {
        let fail_exit = upd().drain_into(a1, dep(i)).add(n, -1).add(a0, 1).build();
        let success_exit = upd()
            .drain_into(a1, dep(i))
            .add(n, -1)
            .add(a0, 1)
            .add(b, 1)
            .build();
        transitions.push(ScmTransition {
            from: alive(i),
            guard: ge1(dep(i)),
            branches: vec![
                Branch {
                    prob: f,
                    update: upd().add(dep(i), -1).add(a1, 1).build(),
                    to: alive(i),
                },
                Branch {
                    prob: 1.0 - f,
                    update: upd().add(dep(i), -1).add(a1, 1).build(),
                    to: dead(i),
                },
            ],
        });
        transitions.push(ScmTransition {
            from: alive(i),
            guard: le0(dep(i)),
            branches: vec![Branch {
                prob: 1.0,
                update: if i + 1 < k {
                    upd().drain_into(a1, dep(i)).build()
                } else {
                    fail_exit
                },
                to: if i + 1 < k { alive(i + 1) } else { entry },
            }],
        });
        transitions.push(ScmTransition {
            from: dead(i),
            guard: ge1(dep(i)),
            branches: vec![Branch {
                prob: 1.0,
                update: upd().add(dep(i), -1).add(a1, 1).build(),
                to: dead(i),
            }],
        });
        transitions.push(ScmTransition {
            from: dead(i),
            guard: le0(dep(i)),
            branches: vec![Branch {
                prob: 1.0,
                update: if i + 1 < k {
                    upd().drain_into(a1, dep(i)).build()
                } else {
                    success_exit
                },
                to: if i + 1 < k { dead(i + 1) } else { entry },
            }],
        });
    }
    transitions.push(ScmTransition {
        from: done,
        guard: Vec::new(),
        branches: vec![Branch {
            prob: 1.0,
            update: Vec::new(),
            to: done,
        }],
    });
    let mut counter_names = vec!["n".to_string()];
    counter_names.extend((0..k).map(|i| format!("c{}", i)));
    counter_names.extend(["a0".into(), "a1".into(), "b".into()]);
    let mut control_names = vec!["trial".to_string()];
    control_names.extend((0..k).map(|i| format!("s{}", i)));
    control_names.extend((0..k).map(|i| format!("s{}_hit", i)));
    control_names.push("done".into());
    control_names.push("viol".into());
    Scm {
        name: "param_binomial".into(),
        counter_names,
        control_names,
        transitions,
        loop_head: entry,
        commit: done,
        violation: viol,
        counter_bound: u32::MAX,
        edge_buffers: vec![b],
        n_compartments: 1 + k,
    }
}

// ---------------------------------------------------------------------
// Model translation
// ---------------------------------------------------------------------

/// Translates a compartmental model into an SCM whose tours through the
/// loop head reproduce the chain-binomial single-step distribution.
///
/// Counter layout: one counter per compartment, one flow buffer per edge,
/// then scratch counters `a0` (processed individuals of the edge currently
/// sampled) and `a1` (dependency sweep scratch). Edges are sampled in
/// order against frozen source counts, overdraw checks route to the
/// violation state, and the commit state applies all buffers at once.
pub fn build_scm(model: &CompartmentalModel) -> Scm {
    let n = model.n_compartments();
    let m = model.n_edges();
    let a0 = n + m;
    let a1 = n + m + 1;
    let buf = |j: usize| n + j;
    let h = model.h.to_f64();

    let mut counter_names: Vec<String> = model.compartments.clone();
    counter_names.extend((0..m).map(|j| format!("b{}", j)));
    counter_names.push("a0".into());
    counter_names.push("a1".into());

    let mut control_names: Vec<String> = vec!["q0".into()];
    let alloc = |names: &mut Vec<String>, name: String| -> usize {
        names.push(name);
        names.len() - 1
    };
    let mut transitions: Vec<ScmTransition> = Vec::new();

    // reserve edge entry states first so each block knows its successor
    let entries: Vec<usize> = (0..m)
        .map(|j| alloc(&mut control_names, format!("e{}", j)))
        .collect();
    let checked: Vec<usize> = (0..n)
        .filter(|&c| model.out_edges()[c].len() >= 2)
        .collect();
    let checks: Vec<usize> = checked
        .iter()
        .map(|&c| alloc(&mut control_names, format!("chk_{}", model.compartments[c])))
        .collect();
    let commit = alloc(&mut control_names, "commit".into());
    let after_edges = *checks.first().unwrap_or(&commit);

    transitions.push(ScmTransition {
        from: 0,
        guard: Vec::new(),
        branches: vec![Branch {
            prob: 1.0,
            update: Vec::new(),
            to: *entries.first().unwrap_or(&after_edges),
        }],
    });

    for (j, edge) in model.edges.iter().enumerate() {
        let entry = entries[j];
        let exit = if j + 1 < m { entries[j + 1] } else { after_edges };
        let src = edge.src;
        match &edge.label {
            EdgeLabel::Constant(v) => {
                let p = -(-h * v.to_f64()).exp_m1();
                transitions.push(ScmTransition {
                    from: entry,
                    guard: ge1(src),
                    branches: vec![
                        Branch {
                            prob: p,
                            update: upd().add(src, -1).add(a0, 1).add(buf(j), 1).build(),
                            to: entry,
                        },
                        Branch {
                            prob: 1.0 - p,
                            update: upd().add(src, -1).add(a0, 1).build(),
                            to: entry,
                        },
                    ],
                });
                transitions.push(ScmTransition {
                    from: entry,
                    guard: le0(src),
                    branches: vec![Branch {
                        prob: 1.0,
                        update: upd().drain_into(a0, src).build(),
                        to: exit,
                    }],
                });
            }
            EdgeLabel::Dependent(deps) => {
                // survival sweep segments; a dependency on the source
                // compartment itself additionally sweeps a0, since the
                // frozen count is split across src and a0 mid-sampling.
                let mut segs: Vec<(usize, f64)> = Vec::new();
                for (k, v) in deps {
                    let f = (-h * v.to_f64()).exp();
                    if *k == src {
                        segs.push((a0, f));
                    }
                    segs.push((*k, f));
                }
                let alive: Vec<usize> = (0..segs.len())
                    .map(|t| alloc(&mut control_names, format!("e{}_s{}", j, t)))
                    .collect();
                let dead: Vec<usize> = (0..segs.len())
                    .map(|t| alloc(&mut control_names, format!("e{}_s{}_hit", j, t)))
                    .collect();
                transitions.push(ScmTransition {
                    from: entry,
                    guard: ge1(src),
                    branches: vec![Branch {
                        prob: 1.0,
                        update: Vec::new(),
                        to: alive[0],
                    }],
                });
                transitions.push(ScmTransition {
                    from: entry,
                    guard: le0(src),
                    branches: vec![Branch {
                        prob: 1.0,
                        update: upd().drain_into(a0, src).build(),
                        to: exit,
                    }],
                });
                for (t, &(ctr, f)) in segs.iter().enumerate() {
                    let last = t + 1 == segs.len();
                    transitions.push(ScmTransition {
                        from: alive[t],
                        guard: ge1(ctr),
                        branches: vec![
                            Branch {
                                prob: f,
                                update: upd().add(ctr, -1).add(a1, 1).build(),
                                to: alive[t],
                            },
                            Branch {
                                prob: 1.0 - f,
                                update: upd().add(ctr, -1).add(a1, 1).build(),
                                to: dead[t],
                            },
                        ],
                    });
                    transitions.push(ScmTransition {
                        from: alive[t],
                        guard: le0(ctr),
                        branches: vec![Branch {
                            prob: 1.0,
                            update: if last {
                                upd().drain_into(a1, ctr).add(src, -1).add(a0, 1).build()
                            } else {
                                upd().drain_into(a1, ctr).build()
                            },
                            to: if last { entry } else { alive[t + 1] },
                        }],
                    });
                    transitions.push(ScmTransition {
                        from: dead[t],
                        guard: ge1(ctr),
                        branches: vec![Branch {
                            prob: 1.0,
                            update: upd().add(ctr, -1).add(a1, 1).build(),
                            to: dead[t],
                        }],
                    });
                    transitions.push(ScmTransition {
                        from: dead[t],
                        guard: le0(ctr),
                        branches: vec![Branch {
                            prob: 1.0,
                            update: if last {
                                upd()
                                    .drain_into(a1, ctr)
                                    .add(src, -1)
                                    .add(a0, 1)
                                    .add(buf(j), 1)
                                    .build()
                            } else {
                                upd().drain_into(a1, ctr).build()
                            },
                            to: if last { entry } else { dead[t + 1] },
                        }],
                    });
                }
            }
        }
    }

    // overdraw checks for compartments with several outgoing edges
    let viol = control_names.len(); // allocated below, after commit exists
    let out = model.out_edges();
    for (pos, &c) in checked.iter().enumerate() {
        let next = if pos + 1 < checks.len() {
            checks[pos + 1]
        } else {
            commit
        };
        let mut coeffs: Vec<(usize, i64)> =
            out[c].iter().map(|&j| (buf(j), 1)).collect();
        coeffs.push((c, -1));
        let ok = vec![LinearConstraint {
            coeffs: coeffs.clone(),
            bound: 0,
        }];
        let bad = vec![LinearConstraint {
            coeffs: coeffs.iter().map(|&(i, a)| (i, -a)).collect(),
            bound: -1,
        }];
        transitions.push(ScmTransition {
            from: checks[pos],
            guard: ok,
            branches: vec![Branch {
                prob: 1.0,
                update: Vec::new(),
                to: next,
            }],
        });
        let mut zero_all = upd();
        for ctr in 0..n + m + 2 {
            zero_all = zero_all.zero(ctr);
        }
        transitions.push(ScmTransition {
            from: checks[pos],
            guard: bad,
            branches: vec![Branch {
                prob: 1.0,
                update: zero_all.build(),
                to: viol,
            }],
        });
    }

    // commit: apply all buffers simultaneously, reset them, loop
    let mut commit_upd = upd();
    for (j, edge) in model.edges.iter().enumerate() {
        commit_upd.entry(edge.src).0.push((buf(j), -1));
        commit_upd.entry(edge.trg).0.push((buf(j), 1));
        commit_upd = commit_upd.zero(buf(j));
    }
    transitions.push(ScmTransition {
        from: commit,
        guard: Vec::new(),
        branches: vec![Branch {
            prob: 1.0,
            update: commit_upd.build(),
            to: 0,
        }],
    });

    control_names.push("viol".into());
    transitions.push(ScmTransition {
        from: viol,
        guard: Vec::new(),
        branches: vec![Branch {
            prob: 1.0,
            update: Vec::new(),
            to: viol,
        }],
    });

    Scm {
        name: model.name.clone(),
        counter_names,
        control_names,
        transitions,
        loop_head: 0,
        commit,
        violation: viol,
        counter_bound: model.pop,
        edge_buffers: (0..m).map(buf).collect(),
        n_compartments: n,
    }
}

// ---------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------

fn negated(g: &LinearConstraint) -> LinearConstraint {
    LinearConstraint {
        coeffs: g.coeffs.iter().map(|&(i, a)| (i, -a)).collect(),
        bound: -g.bound - 1,
    }
}

fn constraints_equal(a: &LinearConstraint, b: &LinearConstraint) -> bool {
    let norm = |c: &LinearConstraint| {
        let mut v: Vec<(usize, i64)> = c.coeffs.iter().filter(|&&(_, a)| a != 0).copied().collect();
        v.sort_unstable();
        (v, c.bound)
    };
    norm(a) == norm(b)
}

fn guards_provably_disjoint(g1: &Guard, g2: &Guard, bound: i64) -> bool {
    // shortcut: some constraint of one guard is the exact negation of a
    // constraint of the other
    for c1 in g1 {
        for c2 in g2 {
            if constraints_equal(&negated(c1), c2) {
                return true;
            }
        }
    }
    // bounded enumeration over the involved counters
    let mut vars: Vec<usize> = g1
        .iter()
        .chain(g2)
        .flat_map(|c| c.coeffs.iter().map(|&(i, _)| i))
        .collect();
    vars.sort_unstable();
    vars.dedup();
    let per = (bound + 1) as u64;
    let combos = per.checked_pow(vars.len() as u32).unwrap_or(u64::MAX);
    if combos > 200_000 {
        return false;
    }
    let mut assignment = vec![0i64; vars.len()];
    loop {
        let mut counters = vec![0i64; vars.iter().copied().max().map_or(0, |v| v + 1)];
        for (slot, &v) in vars.iter().enumerate() {
            counters[v] = assignment[slot];
        }
        if guard_satisfied(g1, &counters) && guard_satisfied(g2, &counters) {
            return false;
        }
        let mut k = 0;
        loop {
            if k == assignment.len() {
                return true;
            }
            assignment[k] += 1;
            if assignment[k] <= bound {
                break;
            }
            assignment[k] = 0;
            k += 1;
        }
    }
}

/// Structural checks: branch probabilities form distributions, indices are
/// in range, and guards of distinct transitions from the same control
/// state are provably disjoint.
pub fn validate_scm(scm: &Scm) -> Result<(), ScmError> {
    let n_ctl = scm.control_names.len();
    let n_ctr = scm.counter_names.len();
    let bound = i64::from(scm.counter_bound.min(10));
    for t in &scm.transitions {
        if t.from >= n_ctl {
            return Err(ScmError::Invalid(format!("control {} out of range", t.from)));
        }
        let sum: f64 = t.branches.iter().map(|b| b.prob).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ScmError::BranchProbSum {
                control: t.from,
                sum,
            });
        }
        for b in &t.branches {
            if b.to >= n_ctl || !(0.0..=1.0).contains(&b.prob) {
                return Err(ScmError::Invalid(format!(
                    "bad branch from control {}",
                    t.from
                )));
            }
            for u in &b.update {
                if u.target >= n_ctr || u.terms.iter().any(|&(i, _)| i >= n_ctr) {
                    return Err(ScmError::Invalid(format!(
                        "update touches unknown counter from control {}",
                        t.from
                    )));
                }
            }
        }
        for c in &t.guard {
            if c.coeffs.iter().any(|&(i, _)| i >= n_ctr) {
                return Err(ScmError::Invalid(format!(
                    "guard touches unknown counter from control {}",
                    t.from
                )));
            }
        }
    }
    let mut by_control: BTreeMap<usize, Vec<&ScmTransition>> = BTreeMap::new();
    for t in &scm.transitions {
        by_control.entry(t.from).or_default().push(t);
    }
    for (ctl, ts) in by_control {
        for i in 0..ts.len() {
            for j in i + 1..ts.len() {
                if !guards_provably_disjoint(&ts[i].guard, &ts[j].guard, bound) {
                    return Err(ScmError::GuardOverlap(ctl));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Expansion
// ---------------------------------------------------------------------

fn enabled_transition<'a>(
    scm: &'a Scm,
    control: usize,
    counters: &[i64],
) -> Result<&'a ScmTransition, ScmError> {
    let mut found = None;
    let mut count = 0;
    for t in scm.transitions.iter().filter(|t| t.from == control) {
        if guard_satisfied(&t.guard, counters) {
            count += 1;
            found = Some(t);
        }
    }
    match count {
        0 => Err(ScmError::Stuck {
            control,
            counters: counters.to_vec(),
        }),
        1 => Ok(found.unwrap()),
        _ => Err(ScmError::Nondeterministic {
            control,
            enabled: count,
        }),
    }
}

fn config_key(control: usize, counters: &[i64]) -> Vec<u32> {
    let mut key = Vec::with_capacity(counters.len() + 1);
    key.push(control as u32);
    key.extend(counters.iter().map(|&c| c as u32));
    key
}

/// Expands the reachable configuration graph from `(loop_head, init)`
/// into an explicit chain. State keys are `[control, counters...]`;
/// states at the loop head carry reward 1.
pub fn expand_scm(scm: &Scm, init: &[u32], max_states: usize) -> Result<MarkovChain, ScmError> {
    if init.len() != scm.counter_names.len() {
        return Err(ScmError::Invalid(format!(
            "initial counters have dimension {}, machine has {}",
            init.len(),
            scm.counter_names.len()
        )));
    }
    let init_counters: Vec<i64> = init.iter().map(|&c| i64::from(c)).collect();
    let init_key = config_key(scm.loop_head, &init_counters);
    let mut index: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut states: Vec<Vec<u32>> = vec![init_key.clone()];
    index.insert(init_key, 0);
    let mut rows: Vec<Vec<(u32, f64)>> = Vec::new();
    let mut queue = std::collections::VecDeque::from([0usize]);
    let mut violation_idx = None;

    while let Some(si) = queue.pop_front() {
        debug_assert_eq!(si, rows.len());
        let (control, counters) = {
            let key = &states[si];
            let control = key[0] as usize;
            let counters: Vec<i64> = key[1..].iter().map(|&c| i64::from(c)).collect();
            (control, counters)
        };
        let t = enabled_transition(scm, control, &counters)?;
        let mut row: BTreeMap<u32, f64> = BTreeMap::new();
        for b in &t.branches {
            let next = apply_update(&b.update, &counters);
            if let Some(pos) = next.iter().position(|&c| c < 0) {
                return Err(ScmError::NegativeCounter {
                    control,
                    counter: pos,
                });
            }
            let key = config_key(b.to, &next);
            let idx = match index.get(&key) {
                Some(&i) => i,
                None => {
                    if states.len() >= max_states {
                        return Err(ScmError::StateSpaceExceeded(max_states));
                    }
                    let i = states.len() as u32;
                    if b.to == scm.violation {
                        violation_idx = Some(i as usize);
                    }
                    index.insert(key.clone(), i);
                    states.push(key);
                    queue.push_back(i as usize);
                    i
                }
            };
            *row.entry(idx).or_insert(0.0) += b.prob;
        }
        rows.push(row.into_iter().collect());
    }

    let row_reward: Vec<f64> = states
        .iter()
        .map(|key| {
            if key[0] as usize == scm.loop_head {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Ok(MarkovChain {
        states,
        rows,
        row_reward,
        initial: 0,
        violation: violation_idx,
    })
}

/// Distribution over the next loop-head counters (plus violation mass)
/// after exactly one tour starting from `counters`. Used to check the
/// translation against the direct single-step semantics.
pub fn tour_distribution(
    scm: &Scm,
    counters: &[u32],
) -> Result<(BTreeMap<State, f64>, f64), ScmError> {
    let start: Vec<i64> = counters.iter().map(|&c| i64::from(c)).collect();
    // memoized first-hit distributions, keyed by configuration
    type Dist = (BTreeMap<State, f64>, f64);
    fn go(
        scm: &Scm,
        control: usize,
        counters: &[i64],
        memo: &mut HashMap<Vec<u32>, Dist>,
    ) -> Result<Dist, ScmError> {
        if control == scm.violation {
            return Ok((BTreeMap::new(), 1.0));
        }
        if control == scm.loop_head {
            let state: State = counters.iter().map(|&c| c as u32).collect();
            return Ok(([(state, 1.0)].into_iter().collect(), 0.0));
        }
        let key = config_key(control, counters);
        if let Some(d) = memo.get(&key) {
            return Ok(d.clone());
        }
        let t = enabled_transition(scm, control, counters)?;
        let branches = t.branches.clone();
        let mut out: Dist = (BTreeMap::new(), 0.0);
        for b in &branches {
            let next = apply_update(&b.update, counters);
            if next.iter().any(|&c| c < 0) {
                return Err(ScmError::NegativeCounter {
                    control,
                    counter: next.iter().position(|&c| c < 0).unwrap(),
                });
            }
            let sub = go(scm, b.to, &next, memo)?;
            for (s, p) in sub.0 {
                *out.0.entry(s).or_insert(0.0) += b.prob * p;
            }
            out.1 += b.prob * sub.1;
        }
        memo.insert(key, out.clone());
        Ok(out)
    }
    // take the single loop-head transition, then run to the next visit
    let t = enabled_transition(scm, scm.loop_head, &start)?;
    let branches = t.branches.clone();
    let mut memo = HashMap::new();
    let mut out: Dist = (BTreeMap::new(), 0.0);
    for b in &branches {
        let next = apply_update(&b.update, &start);
        let sub = go(scm, b.to, &next, &mut memo)?;
        for (s, p) in sub.0 {
            *out.0.entry(s).or_insert(0.0) += b.prob * p;
        }
        out.1 += b.prob * sub.1;
    }
    Ok(out)
}

/// Initial counter vector for a compartmental start state: compartment
/// counts followed by zeroed buffers and scratch counters.
pub fn embed_state(scm: &Scm, state: &[u32]) -> Vec<u32> {
    let mut counters = vec![0u32; scm.counter_names.len()];
    counters[..state.len()].copy_from_slice(state);
    counters
}
