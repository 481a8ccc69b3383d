//! Parser and canonical serializer for the CMS model description format.
//!
//! ```text
//! -meta-
//! pop 10
//! h 1
//! comps 3
//! final 1
//! -trans-
//! 0 1 [0.2 1]
//! 1 2 [0.3 _]
//! ```
//!
//! An edge line carries one or more `[rate dep]` groups. A single group
//! with `_` as the dependency denotes a constant rate; otherwise the
//! groups define a compartment-dependent rate vector. `#` starts a
//! comment; blank lines are ignored.

use crate::model::{CompartmentalModel, Edge, EdgeLabel, ModelError};
use crate::rational::Rational;

struct Tok<'a> {
    text: &'a str,
    line: usize,
    col: usize,
}

fn tokenize_line(line: &str, lineno: usize) -> Vec<Tok<'_>> {
    let line = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut toks = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c == ' ' || c == '\t' || c == '\r' {
            i += 1;
            continue;
        }
        if c == '[' || c == ']' {
            toks.push(Tok {
                text: &line[i..i + 1],
                line: lineno,
                col: i + 1,
            });
            i += 1;
            continue;
        }
        let col = i;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c == ' ' || c == '\t' || c == '\r' || c == '[' || c == ']' {
                break;
            }
            i += 1;
        }
        toks.push(Tok {
            text: &line[col..i],
            line: lineno,
            col: col + 1,
        });
    }
    toks
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ModelError {
    ModelError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

fn parse_nat(t: &Tok) -> Result<u64, ModelError> {
    t.text
        .parse::<u64>()
        .map_err(|_| syntax(t.line, t.col, format!("expected a natural number, got `{}`", t.text)))
}

fn parse_dec(t: &Tok) -> Result<Rational, ModelError> {
    Rational::parse_decimal(t.text)
        .ok_or_else(|| syntax(t.line, t.col, format!("expected a decimal number, got `{}`", t.text)))
}

/// Parses a CMS file into a validated model.
pub fn parse_cms(text: &str) -> Result<CompartmentalModel, ModelError> {
    let mut pop: Option<u64> = None;
    let mut h: Option<Rational> = None;
    let mut comps: Option<u64> = None;
    let mut final_field: Option<u64> = None;
    let mut edges: Vec<Edge> = Vec::new();

    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Meta,
        Trans,
    }
    let mut section = Section::Preamble;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let toks = tokenize_line(raw, lineno);
        if toks.is_empty() {
            continue;
        }
        match toks[0].text {
            "-meta-" => {
                section = Section::Meta;
                continue;
            }
            "-trans-" => {
                section = Section::Trans;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Preamble => {
                return Err(syntax(lineno, toks[0].col, "expected `-meta-` header"));
            }
            Section::Meta => {
                if toks.len() != 2 {
                    return Err(syntax(lineno, toks[0].col, "meta line must be `key value`"));
                }
                let key = toks[0].text;
                match key {
                    "pop" => pop = Some(parse_nat(&toks[1])?),
                    "h" => h = Some(parse_dec(&toks[1])?),
                    "comps" => comps = Some(parse_nat(&toks[1])?),
                    "final" => final_field = Some(parse_nat(&toks[1])?),
                    _ => {
                        return Err(syntax(
                            lineno,
                            toks[0].col,
                            format!("unknown meta field `{}`", key),
                        ))
                    }
                }
            }
            Section::Trans => {
                let n = comps.ok_or(ModelError::MissingMetaField { field: "comps" })? as usize;
                if toks.len() < 2 {
                    return Err(syntax(lineno, toks[0].col, "edge line must start with `src dst`"));
                }
                let src = parse_nat(&toks[0])? as usize;
                let trg = parse_nat(&toks[1])? as usize;
                let at = format!("line {}", lineno);
                if src >= n {
                    return Err(ModelError::IndexOutOfRange {
                        at,
                        what: "source",
                        index: src,
                        comps: n,
                    });
                }
                if trg >= n {
                    return Err(ModelError::IndexOutOfRange {
                        at,
                        what: "target",
                        index: trg,
                        comps: n,
                    });
                }
                if src == trg {
                    return Err(ModelError::SelfLoop { at, comp: src });
                }
                // one or more [rate dep] groups
                let mut groups: Vec<(Rational, Option<usize>)> = Vec::new();
                let mut i = 2;
                while i < toks.len() {
                    if toks[i].text != "[" {
                        return Err(syntax(toks[i].line, toks[i].col, "expected `[`"));
                    }
                    if i + 3 >= toks.len() || toks[i + 3].text != "]" {
                        return Err(syntax(
                            toks[i].line,
                            toks[i].col,
                            "rate group must be `[rate dep]`",
                        ));
                    }
                    let rate = parse_dec(&toks[i + 1])?;
                    let dep = if toks[i + 2].text == "_" {
                        None
                    } else {
                        let d = parse_nat(&toks[i + 2])? as usize;
                        if d >= n {
                            return Err(ModelError::IndexOutOfRange {
                                at: format!("line {}", lineno),
                                what: "dependency",
                                index: d,
                                comps: n,
                            });
                        }
                        Some(d)
                    };
                    if !rate.is_positive() {
                        return Err(ModelError::NonPositiveRate {
                            at: format!("line {}", lineno),
                        });
                    }
                    groups.push((rate, dep));
                    i += 4;
                }
                if groups.is_empty() {
                    return Err(syntax(lineno, toks[1].col, "edge needs at least one rate group"));
                }
                let label = match groups.as_slice() {
                    [(rate, None)] => EdgeLabel::Constant(*rate),
                    _ => {
                        let mut v = Vec::with_capacity(groups.len());
                        for (rate, dep) in &groups {
                            match dep {
                                Some(d) => v.push((*d, *rate)),
                                None => {
                                    return Err(syntax(
                                        lineno,
                                        1,
                                        "`_` is only legal in a single-group edge line",
                                    ))
                                }
                            }
                        }
                        v.sort_by_key(|(d, _)| *d);
                        EdgeLabel::Dependent(v)
                    }
                };
                edges.push(Edge { src, trg, label });
            }
        }
    }

    let pop = pop.ok_or(ModelError::MissingMetaField { field: "pop" })?;
    let h = h.ok_or(ModelError::MissingMetaField { field: "h" })?;
    let comps = comps.ok_or(ModelError::MissingMetaField { field: "comps" })? as usize;
    let final_field = final_field.ok_or(ModelError::MissingMetaField { field: "final" })? as usize;
    if pop == 0 {
        return Err(ModelError::PopulationZero);
    }

    let mut model = CompartmentalModel {
        name: "cms".into(),
        compartments: (0..comps).map(|i| format!("c{}", i)).collect(),
        edges,
        pop: pop as u32,
        h,
        terminal: final_field,
        infectious_set: vec![],
    };
    model.infectious_set = model.default_infectious_set();
    crate::model::validate(&model)?;
    Ok(model)
}

/// Canonical serializer; `parse_cms(serialize_cms(m))` reproduces `m`
/// up to compartment naming.
pub fn serialize_cms(model: &CompartmentalModel) -> String {
    let mut out = String::new();
    out.push_str("-meta-\n");
    out.push_str(&format!("pop {}\n", model.pop));
    out.push_str(&format!("h {}\n", model.h.to_decimal_string()));
    out.push_str(&format!("comps {}\n", model.compartments.len()));
    out.push_str(&format!("final {}\n", model.terminal));
    out.push_str("-trans-\n");
    for e in &model.edges {
        out.push_str(&format!("{} {}", e.src, e.trg));
        match &e.label {
            EdgeLabel::Constant(r) => {
                out.push_str(&format!(" [{} _]", r.to_decimal_string()));
            }
            EdgeLabel::Dependent(v) => {
                for (dep, r) in v {
                    out.push_str(&format!(" [{} {}]", r.to_decimal_string(), dep));
                }
            }
        }
        out.push('\n');
    }
    out
}
