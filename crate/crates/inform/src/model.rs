//! Compartmental model graph: compartments, rate-labeled edges, and
//! validation. This is the single source of truth every backend compiles
//! from.

use crate::rational::Rational;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Number of individuals per compartment.
pub type State = Vec<u32>;
/// Number of individuals following each edge during one time-step.
pub type FlowRealization = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EdgeLabel {
    /// Fixed rate; per-step success probability 1 - exp(-h * rate).
    Constant(Rational),
    /// Compartment-dependent rate vector (sparse, positive entries);
    /// per-step success probability 1 - prod_k exp(-h * s_k * v_k).
    Dependent(Vec<(usize, Rational)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub trg: usize,
    pub label: EdgeLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompartmentalModel {
    pub name: String,
    pub compartments: Vec<String>,
    pub edges: Vec<Edge>,
    pub pop: u32,
    pub h: Rational,
    /// Designated sink compartment from the `final` meta field; used for
    /// reporting only.
    pub terminal: usize,
    /// Compartments whose emptiness defines "end of epidemic" (sorted).
    pub infectious_set: Vec<usize>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{at}: self-loop on compartment {comp}")]
    SelfLoop { at: String, comp: usize },
    #[error("{at}: {what} index {index} out of range (comps = {comps})")]
    IndexOutOfRange {
        at: String,
        what: &'static str,
        index: usize,
        comps: usize,
    },
    #[error("{at}: rate must be strictly positive")]
    NonPositiveRate { at: String },
    #[error("missing meta field `{field}`")]
    MissingMetaField { field: &'static str },
    #[error("population must be greater than zero")]
    PopulationZero,
}

impl CompartmentalModel {
    pub fn n_compartments(&self) -> usize {
        self.compartments.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Default infectious set: every compartment with at least one
    /// outgoing edge, excluding compartment 0.
    pub fn default_infectious_set(&self) -> Vec<usize> {
        let mut out = vec![false; self.compartments.len()];
        for e in &self.edges {
            out[e.src] = true;
        }
        (1..self.compartments.len()).filter(|&c| out[c]).collect()
    }

    pub fn with_population(mut self, pop: u32) -> Self {
        self.pop = pop;
        self
    }

    pub fn is_epidemic_over(&self, state: &[u32]) -> bool {
        self.infectious_set.iter().all(|&c| state[c] == 0)
    }

    /// Out-edges grouped by source compartment, preserving edge order.
    pub fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut per = vec![Vec::new(); self.compartments.len()];
        for (j, e) in self.edges.iter().enumerate() {
            per[e.src].push(j);
        }
        per
    }
}

/// Checks all model invariants; `at` in errors names the offending edge
/// or field.
pub fn validate(model: &CompartmentalModel) -> Result<(), ModelError> {
    let n = model.compartments.len();
    if n == 0 {
        return Err(ModelError::MissingMetaField { field: "comps" });
    }
    if model.pop == 0 {
        return Err(ModelError::PopulationZero);
    }
    if !model.h.is_positive() {
        return Err(ModelError::NonPositiveRate {
            at: "meta field h".into(),
        });
    }
    if model.terminal >= n {
        return Err(ModelError::IndexOutOfRange {
            at: "meta field final".into(),
            what: "compartment",
            index: model.terminal,
            comps: n,
        });
    }
    for &c in &model.infectious_set {
        if c >= n {
            return Err(ModelError::IndexOutOfRange {
                at: "infectious set".into(),
                what: "compartment",
                index: c,
                comps: n,
            });
        }
    }
    for (j, e) in model.edges.iter().enumerate() {
        let at = format!("edge {}", j);
        if e.src >= n {
            return Err(ModelError::IndexOutOfRange {
                at,
                what: "source",
                index: e.src,
                comps: n,
            });
        }
        if e.trg >= n {
            return Err(ModelError::IndexOutOfRange {
                at,
                what: "target",
                index: e.trg,
                comps: n,
            });
        }
        if e.src == e.trg {
            return Err(ModelError::SelfLoop { at, comp: e.src });
        }
        match &e.label {
            EdgeLabel::Constant(r) => {
                if !r.is_positive() {
                    return Err(ModelError::NonPositiveRate { at });
                }
            }
            EdgeLabel::Dependent(v) => {
                if v.is_empty() || !v.iter().any(|(_, r)| r.is_positive()) {
                    return Err(ModelError::NonPositiveRate { at });
                }
                for (dep, r) in v {
                    if *dep >= n {
                        return Err(ModelError::IndexOutOfRange {
                            at,
                            what: "dependency",
                            index: *dep,
                            comps: n,
                        });
                    }
                    if r.num() < 0 {
                        return Err(ModelError::NonPositiveRate { at });
                    }
                }
            }
        }
    }
    Ok(())
}

fn dec(s: &str) -> Rational {
    Rational::parse_decimal(s).expect("builtin rate literal")
}

fn sir_model() -> CompartmentalModel {
    let m = CompartmentalModel {
        name: "sir".into(),
        compartments: vec!["S".into(), "I".into(), "R".into()],
        edges: vec![
            Edge {
                src: 0,
                trg: 1,
                label: EdgeLabel::Dependent(vec![(1, dec("0.2"))]),
            },
            Edge {
                src: 1,
                trg: 2,
                label: EdgeLabel::Constant(dec("0.3")),
            },
        ],
        pop: 10,
        h: dec("1"),
        terminal: 1,
        infectious_set: vec![],
    };
    let inf = m.default_infectious_set();
    CompartmentalModel {
        infectious_set: inf,
        ..m
    }
}

const COVID_H: &str = "0.04166666666666666";

fn covid_model(name: &str, lambda: EdgeLabel) -> CompartmentalModel {
    let comps = [
        "S", "E", "I_presym", "I_asym", "I_mild", "I_sev", "I_hosp", "I_icu", "R", "D",
    ];
    let c = |label: &str| dec(label);
    let constant = |src: usize, trg: usize, rate: &str| Edge {
        src,
        trg,
        label: EdgeLabel::Constant(c(rate)),
    };
    CompartmentalModel {
        name: name.into(),
        compartments: comps.iter().map(|s| s.to_string()).collect(),
        edges: vec![
            Edge {
                src: 0,
                trg: 1,
                label: lambda,
            },
            constant(1, 2, "0.729"),    // gamma
            constant(2, 3, "0.399"),    // p * theta
            constant(2, 4, "0.076"),    // (1-p) * theta
            constant(3, 8, "0.240"),    // delta_1
            constant(4, 8, "0.743904"), // delta_2
            constant(4, 5, "0.012096"), // psi
            constant(5, 6, "0.07425"),  // phi_1 * omega
            constant(5, 7, "0.02475"),  // (1-phi_1) * omega
            constant(6, 8, "0.184075"), // delta_3
            constant(6, 9, "0.000925"), // tau_1
            constant(7, 8, "0.184075"), // delta_4
            constant(7, 9, "0.000925"), // tau_2
        ],
        pop: 5,
        h: dec(COVID_H),
        terminal: 8,
        // end of epidemic: E, I_presym, I_asym, I_mild, I_sev all empty.
        // Hospitalized and ICU cases no longer transmit.
        infectious_set: vec![1, 2, 3, 4, 5],
    }
}

/// Belgian COVID-19 model (age group [20-30]) with the force-of-infection
/// vector lambda = q*C_asym on pre/asymptomatic and q*C_sym on mild/severe.
pub fn covid_be() -> CompartmentalModel {
    covid_model(
        "covid_be",
        EdgeLabel::Dependent(vec![
            (2, dec("0.30906")),
            (3, dec("0.30906")),
            (4, dec("0.07752")),
            (5, dec("0.07752")),
        ]),
    )
}

/// Variant of `covid_be` whose lambda edge reproduces the reference
/// tables bit-for-bit. The reference computation chains the
/// per-step success probabilities (0.0127949398, 0.0032247892) as survival
/// factors instead of exp(-h*v); the rates below are -ln(f)/h so that our
/// semantics yields exactly those factors.
pub fn covid_be_ref() -> CompartmentalModel {
    covid_model(
        "covid_be_ref",
        EdgeLabel::Dependent(vec![
            (2, Rational::new(10460893234426393, 100_000_000_000_000)),
            (3, Rational::new(10460893234426393, 100_000_000_000_000)),
            (4, Rational::new(1376853046850839, 10_000_000_000_000)),
            (5, Rational::new(1376853046850839, 10_000_000_000_000)),
        ]),
    )
}

/// Models bundled with the tool, keyed by name.
pub fn builtin_models() -> BTreeMap<String, CompartmentalModel> {
    let mut map = BTreeMap::new();
    for m in [sir_model(), covid_be(), covid_be_ref()] {
        map.insert(m.name.clone(), m);
    }
    map
}
