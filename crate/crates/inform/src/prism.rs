//! PRISM-language output: renders a translated counter machine as a dtmc
//! module with guarded commands plus the standard property set, with
//! byte-deterministic text, and optionally cross-checks the files with an
//! external model checker.

use crate::model::CompartmentalModel;
use crate::scm::{Guard, Scm, Update};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct PrismModel {
    pub source_text: String,
    pub properties_text: String,
}

#[derive(Debug, Error)]
pub enum PrismError {
    #[error("cannot derive a finite counter bound for this machine")]
    UnboundedCounter,
    #[error("initial state has dimension {got}, model has {want} compartments")]
    BadInitial { got: usize, want: usize },
    #[error("could not parse external tool output: {0}")]
    OutputParseError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn counter_ident(scm: &Scm, idx: usize) -> String {
    if idx < scm.n_compartments {
        format!("c{}", idx)
    } else if let Some(pos) = scm.edge_buffers.iter().position(|&b| b == idx) {
        format!("b{}", pos)
    } else {
        format!("a{}", idx - scm.n_compartments - scm.edge_buffers.len())
    }
}

fn prob_str(p: f64) -> String {
    if p == 1.0 {
        "1".into()
    } else {
        format!("{}", p)
    }
}

fn linear_str(scm: &Scm, terms: &[(usize, i64)], constant: i64) -> String {
    let mut out = String::new();
    for &(i, a) in terms {
        if a == 0 {
            continue;
        }
        let name = counter_ident(scm, i);
        if out.is_empty() {
            match a {
                1 => out.push_str(&name),
                -1 => {
                    out.push('-');
                    out.push_str(&name);
                }
                _ => {
                    let _ = write!(out, "{}*{}", a, name);
                }
            }
        } else if a > 0 {
            if a == 1 {
                let _ = write!(out, "+{}", name);
            } else {
                let _ = write!(out, "+{}*{}", a, name);
            }
        } else if a == -1 {
            let _ = write!(out, "-{}", name);
        } else {
            let _ = write!(out, "{}*{}", a, name);
        }
    }
    if constant != 0 || out.is_empty() {
        if out.is_empty() {
            let _ = write!(out, "{}", constant);
        } else if constant > 0 {
            let _ = write!(out, "+{}", constant);
        } else {
            let _ = write!(out, "{}", constant);
        }
    }
    out
}

fn guard_str(scm: &Scm, from: usize, guard: &Guard) -> String {
    let mut out = format!("q={}", from);
    for c in guard {
        // render the common single-counter forms compactly
        if c.coeffs.len() == 1 {
            let (i, a) = c.coeffs[0];
            let name = counter_ident(scm, i);
            if a == 1 {
                let _ = write!(out, " & {}<={}", name, c.bound);
                continue;
            }
            if a == -1 {
                let _ = write!(out, " & {}>={}", name, -c.bound);
                continue;
            }
        }
        let _ = write!(out, " & {}<={}", linear_str(scm, &c.coeffs, 0), c.bound);
    }
    out
}

fn update_str(scm: &Scm, to: usize, update: &Update) -> String {
    let mut out = format!("(q'={})", to);
    for u in update {
        let _ = write!(
            out,
            "&({}'={})",
            counter_ident(scm, u.target),
            linear_str(scm, &u.terms, u.constant)
        );
    }
    out
}

fn infectious_sum(scm: &Scm, model: &CompartmentalModel) -> String {
    if model.infectious_set.is_empty() {
        return "0".into();
    }
    model
        .infectious_set
        .iter()
        .map(|&c| counter_ident(scm, c))
        .collect::<Vec<_>>()
        .join("+")
}

/// Renders the machine as deterministic PRISM text together with the
/// end-of-epidemic, population-constancy and one-shot properties (the
/// one-shot property watches edge 0).
pub fn emit_prism(
    scm: &Scm,
    model: &CompartmentalModel,
    init: &[u32],
) -> Result<PrismModel, PrismError> {
    if scm.counter_bound == u32::MAX {
        return Err(PrismError::UnboundedCounter);
    }
    if init.len() != model.n_compartments() {
        return Err(PrismError::BadInitial {
            got: init.len(),
            want: model.n_compartments(),
        });
    }
    let bound = scm.counter_bound;
    let mut src = String::new();
    let _ = writeln!(src, "// {}", scm.name);
    let _ = writeln!(src, "// control states:");
    for (i, name) in scm.control_names.iter().enumerate() {
        let _ = writeln!(src, "//   q={} {}", i, name);
    }
    let _ = writeln!(src, "// counters:");
    for (i, name) in scm.counter_names.iter().enumerate() {
        let _ = writeln!(src, "//   {} {}", counter_ident(scm, i), name);
    }
    let _ = writeln!(src, "dtmc");
    let _ = writeln!(src);
    let _ = writeln!(src, "module {}", scm.name);
    let _ = writeln!(src, "\tq : [0..{}] init 0;", scm.violation);
    for i in 0..scm.counter_names.len() {
        let v = if i < scm.n_compartments { init[i] } else { 0 };
        let _ = writeln!(
            src,
            "\t{} : [0..{}] init {};",
            counter_ident(scm, i),
            bound,
            v
        );
    }
    let _ = writeln!(src);
    for t in &scm.transitions {
        let branches = t
            .branches
            .iter()
            .map(|b| format!("{}:{}", prob_str(b.prob), update_str(scm, b.to, &b.update)))
            .collect::<Vec<_>>()
            .join(" + ");
        let _ = writeln!(src, "\t[] {} -> {};", guard_str(scm, t.from, &t.guard), branches);
    }
    let _ = writeln!(src, "endmodule");
    let _ = writeln!(src);
    let _ = writeln!(src, "rewards \"time_step\"");
    let _ = writeln!(src, "\tq={} : 1;", scm.loop_head);
    let _ = writeln!(src, "endrewards");

    let sum = infectious_sum(scm, model);
    let os_buf = counter_ident(scm, scm.edge_buffers.first().copied().unwrap_or(0));
    let os_init = model
        .edges
        .first()
        .map(|e| init[e.src])
        .unwrap_or(0);
    let mut props = String::new();
    let _ = writeln!(props, "// population stays constant until the epidemic ends");
    let _ = writeln!(
        props,
        "P=? [ (q<{}) U ((q={}) & ({}=0)) ]",
        scm.violation, scm.loop_head, sum
    );
    let _ = writeln!(props);
    let _ = writeln!(props, "// expected time-steps until the epidemic ends");
    let _ = writeln!(
        props,
        "R{{\"time_step\"}}=? [ F (((q={}) & ({}=0)) | (q={})) ]",
        scm.loop_head, sum, scm.violation
    );
    let _ = writeln!(props);
    let _ = writeln!(props, "// first flow over edge 0 moves its whole source population");
    let _ = writeln!(
        props,
        "P=? [ ((q!={}) | ({}=0)) U ((q={}) & ({}={})) ]",
        scm.commit, os_buf, scm.commit, os_buf, os_init
    );
    Ok(PrismModel {
        source_text: src,
        properties_text: props,
    })
}

/// Result of invoking an external probabilistic model checker.
#[derive(Debug, Clone, PartialEq)]
pub enum ExternalStatus {
    /// Values parsed from the tool, one per property.
    Ran(Vec<f64>),
    ToolNotFound,
}

/// Writes the emitted files into `dir` and runs an external checker on
/// them (`storm` by default). A missing binary is reported, not an error.
pub fn check_external(
    prism: &PrismModel,
    dir: &Path,
    tool: Option<&str>,
) -> Result<ExternalStatus, PrismError> {
    let model_path = dir.join("model.prism");
    let props_path = dir.join("model.props");
    std::fs::write(&model_path, &prism.source_text)?;
    std::fs::write(&props_path, &prism.properties_text)?;
    let tool = tool.unwrap_or("storm");
    let output = match std::process::Command::new(tool)
        .arg("--prism")
        .arg(&model_path)
        .arg("--prop")
        .arg(&props_path)
        .output()
    {
        Ok(o) => o,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(ExternalStatus::ToolNotFound)
        }
        Err(e) => return Err(e.into()),
    };
    let text = String::from_utf8_lossy(&output.stdout);
    let mut values = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix("Result (for initial states):") {
            let v: f64 = rest
                .trim()
                .parse()
                .map_err(|_| PrismError::OutputParseError(line.to_string()))?;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(PrismError::OutputParseError(
            "no result lines in tool output".into(),
        ));
    }
    Ok(ExternalStatus::Ran(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_models, CompartmentalModel};
    use crate::rational::Rational;
    use crate::scm::build_scm;

    #[test]
    fn emission_is_deterministic() {
        let m = builtin_models().remove("sir").unwrap();
        let scm = build_scm(&m);
        let a = emit_prism(&scm, &m, &[9, 1, 0]).unwrap();
        let b = emit_prism(&scm, &m, &[9, 1, 0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn covid_properties_contain_reward_query() {
        let m = builtin_models().remove("covid_be").unwrap();
        let scm = build_scm(&m);
        let out = emit_prism(&scm, &m, &[4, 0, 0, 0, 1, 0, 0, 0, 0, 0]).unwrap();
        assert!(out.properties_text.contains("R{\"time_step\"}=? [ F ("));
        assert!(out.properties_text.contains("c1+c2+c3+c4+c5=0"));
        assert!(out.source_text.contains("rewards \"time_step\""));
    }

    #[test]
    fn minimal_model_is_a_self_loop() {
        let m = CompartmentalModel {
            name: "single".into(),
            compartments: vec!["only".into()],
            edges: vec![],
            pop: 1,
            h: Rational::from_int(1),
            terminal: 0,
            infectious_set: vec![],
        };
        let scm = build_scm(&m);
        let out = emit_prism(&scm, &m, &[1]).unwrap();
        assert!(out.source_text.contains("dtmc"));
        assert!(out.source_text.contains("module single"));
        // loop head -> commit -> loop head, no probabilistic branching
        assert!(out.source_text.contains("[] q=0 -> 1:(q'=1);"));
    }

    #[test]
    fn gadget_without_bound_rejected() {
        let g = crate::scm::binomial_gadget(0.5);
        let m = builtin_models().remove("sir").unwrap();
        assert!(matches!(
            emit_prism(&g, &m, &[9, 1, 0]),
            Err(PrismError::UnboundedCounter)
        ));
    }

    #[test]
    fn missing_tool_soft_skips() {
        let m = builtin_models().remove("sir").unwrap();
        let scm = build_scm(&m);
        let out = emit_prism(&scm, &m, &[9, 1, 0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let status = check_external(&out, dir.path(), Some("definitely-not-a-checker")).unwrap();
        assert_eq!(status, ExternalStatus::ToolNotFound);
    }
}
