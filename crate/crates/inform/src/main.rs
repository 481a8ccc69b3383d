//! Command-line front end: compile models to PRISM/SCM artifacts, answer
//! queries exactly or statistically, and inspect models.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use inform::cms::{parse_cms, serialize_cms};
use inform::exact::{self, ExactOptions, Query};
use inform::model::{builtin_models, validate, CompartmentalModel};
use inform::prism::emit_prism;
use inform::report::{EdgeInfo, RunReport};
use inform::scm::{build_scm, validate_scm};
use inform::semantics::{success_probability, SemanticsError, DEFAULT_MAX_STATES};
use inform::stat::{estimate, SamplingPlan, StatError};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "inform", version, about = "Compile and analyze stochastic compartmental models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryArg {
    Popinc,
    Eoe,
    Oneshot,
    Reach,
}

#[derive(Subcommand)]
enum Command {
    /// Translate a model to PRISM, properties and machine description files
    Compile {
        /// Model file path or builtin name (sir, covid_be, covid_be_ref)
        input: String,
        /// Initial compartment counts, comma separated
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<u32>>,
        /// Output directory
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Answer a query with the exact engine
    Check {
        input: String,
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<u32>>,
        #[arg(long, value_enum)]
        query: QueryArg,
        /// Edge index for one-shot queries
        #[arg(long, default_value_t = 0)]
        edge: usize,
        /// Target state for reach queries, comma separated
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<u32>>,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(long)]
        max_states: Option<usize>,
        /// Pretty text output instead of JSON
        #[arg(long)]
        human: bool,
    },
    /// Estimate a query with the statistical engine
    Simulate {
        input: String,
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<u32>>,
        #[arg(long, value_enum)]
        query: QueryArg,
        #[arg(long, default_value_t = 0)]
        edge: usize,
        #[arg(long, value_delimiter = ',')]
        target: Option<Vec<u32>>,
        /// Confidence parameter delta: the CI misses with probability <= delta
        #[arg(long, default_value_t = 0.05)]
        confidence: f64,
        /// Total confidence interval width
        #[arg(long, default_value_t = 0.01)]
        width: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (default: all cores)
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 100_000_000)]
        max_samples: u64,
        #[arg(long)]
        human: bool,
    },
    /// Describe a model: compartments, edges, probabilities, size estimate
    Info {
        input: String,
        #[arg(long, value_delimiter = ',')]
        init: Option<Vec<u32>>,
        #[arg(long)]
        human: bool,
    },
}

struct CliError {
    message: String,
    code: u8,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code,
        }
    }
}

impl From<SemanticsError> for CliError {
    fn from(e: SemanticsError) -> Self {
        match e {
            SemanticsError::StateSpaceExceeded(_) => CliError::new(
                2,
                format!("{e}; consider the `simulate` command for large populations"),
            ),
            other => CliError::new(1, other.to_string()),
        }
    }
}

impl From<exact::ExactError> for CliError {
    fn from(e: exact::ExactError) -> Self {
        match e {
            exact::ExactError::Semantics(s) => s.into(),
            other => CliError::new(1, other.to_string()),
        }
    }
}

impl From<StatError> for CliError {
    fn from(e: StatError) -> Self {
        match e {
            StatError::SampleCapReached { .. } => CliError::new(3, e.to_string()),
            StatError::Semantics(s) => s.into(),
            other => CliError::new(1, other.to_string()),
        }
    }
}

fn load_model(input: &str, init: Option<&[u32]>) -> Result<CompartmentalModel, CliError> {
    let mut model = if let Some(m) = builtin_models().remove(input) {
        m
    } else {
        let text = std::fs::read_to_string(input)
            .map_err(|e| CliError::new(1, format!("{}: {}", input, e)))?;
        let mut m = parse_cms(&text).map_err(|e| CliError::new(1, format!("{}: {}", input, e)))?;
        m.name = PathBuf::from(input)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        m
    };
    if let Some(init) = init {
        if init.len() != model.n_compartments() {
            return Err(CliError::new(
                1,
                format!(
                    "--init has {} entries, model has {} compartments",
                    init.len(),
                    model.n_compartments()
                ),
            ));
        }
        // the initial counts define the population under analysis
        model.pop = init.iter().sum();
        if model.pop == 0 {
            return Err(CliError::new(1, "--init must place at least one individual"));
        }
    }
    validate(&model).map_err(|e| CliError::new(1, e.to_string()))?;
    Ok(model)
}

fn initial_state(model: &CompartmentalModel, init: Option<Vec<u32>>) -> Vec<u32> {
    init.unwrap_or_else(|| {
        let mut s = vec![0; model.n_compartments()];
        s[0] = model.pop;
        s
    })
}

fn build_query(
    arg: QueryArg,
    edge: usize,
    target: Option<Vec<u32>>,
) -> Result<Query, CliError> {
    Ok(match arg {
        QueryArg::Popinc => Query::PopInc,
        QueryArg::Eoe => Query::Eoe,
        QueryArg::Oneshot => Query::OneShot { edge },
        QueryArg::Reach => Query::Reach {
            target: target.ok_or_else(|| CliError::new(1, "--query reach requires --target"))?,
        },
    })
}

fn max_states_cap(flag: Option<usize>) -> usize {
    flag.or_else(|| {
        std::env::var("INFORM_MAX_STATES")
            .ok()
            .and_then(|v| v.parse().ok())
    })
    .unwrap_or(DEFAULT_MAX_STATES)
}

fn emit(report: &RunReport, human: bool) {
    if human {
        println!("model     {} ({} compartments, {} edges, pop {})",
            report.model.name, report.model.compartments, report.model.edges, report.model.pop);
        if let Some(init) = &report.initial {
            println!("initial   {:?}", init);
        }
        if let Some(q) = &report.query {
            println!("query     {:?}", q);
        }
        if let Some(e) = &report.exact {
            if e.infinite {
                println!("value     infinite");
            } else {
                println!("value     {}", e.value);
            }
            println!("residual  {} after {} sweeps", e.residual, e.iterations);
        }
        if let Some(v) = report.violation_probability {
            println!("violation {}", v);
        }
        if let Some(est) = &report.estimate {
            println!("estimate  {} in [{}, {}]", est.mean, est.ci_low, est.ci_high);
            println!("samples   {} ({})", est.samples, est.method);
        }
        if let Some(n) = report.n_states {
            println!("states    {}", n);
        }
        if let Some(files) = &report.files {
            for f in files {
                println!("wrote     {}", f);
            }
        }
        if let Some(comps) = &report.compartments {
            println!("compartments {}", comps.join(" "));
        }
        if let Some(edges) = &report.edge_details {
            for e in edges {
                println!(
                    "edge {:2}  {} -> {}  rate {}  p {}",
                    e.index, e.from, e.to, e.rate, e.probability
                );
            }
        }
        if let Some(est) = report.state_space_estimate {
            println!("state-space estimate {:.3e}", est);
        }
        for w in &report.warnings {
            println!("warning   {}", w);
        }
        println!("time      {} ms", report.wall_ms);
    } else {
        println!("{}", report.to_json());
    }
}

fn cmd_compile(input: String, init: Option<Vec<u32>>, out: PathBuf) -> Result<RunReport, CliError> {
    let model = load_model(&input, init.as_deref())?;
    let init = initial_state(&model, init);
    let mut report = RunReport::new("compile", &model);
    let scm = build_scm(&model);
    validate_scm(&scm).map_err(|e| CliError::new(1, e.to_string()))?;
    let prism = emit_prism(&scm, &model, &init).map_err(|e| CliError::new(1, e.to_string()))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::new(1, e.to_string()))?;
    let base = out.join(&model.name);
    let mut files = Vec::new();
    for (ext, text) in [
        ("prism", prism.source_text),
        ("props", prism.properties_text),
        (
            "scm.json",
            serde_json::to_string_pretty(&scm).expect("scm serializes") + "\n",
        ),
    ] {
        let path = base.with_extension(ext);
        std::fs::write(&path, text).map_err(|e| CliError::new(1, e.to_string()))?;
        files.push(path.display().to_string());
    }
    report.initial = Some(init);
    report.files = Some(files);
    Ok(report)
}

fn cmd_check(
    input: String,
    init: Option<Vec<u32>>,
    query: QueryArg,
    edge: usize,
    target: Option<Vec<u32>>,
    tol: f64,
    max_states: Option<usize>,
) -> Result<RunReport, CliError> {
    let model = load_model(&input, init.as_deref())?;
    let init = initial_state(&model, init);
    let query = build_query(query, edge, target)?;
    let opts = ExactOptions {
        tol,
        max_states: max_states_cap(max_states),
        ..ExactOptions::default()
    };
    let mut report = RunReport::new("check", &model);
    report.engine = Some("exact".into());
    report.initial = Some(init.clone());
    report.query = Some(query.clone());
    let answer = exact::evaluate(&model, &init, &query, &opts)?;
    if matches!(query, Query::PopInc) {
        report.violation_probability =
            Some(exact::violation_probability(&model, &init, &opts)?);
    }
    let chain = inform::semantics::build_markov_chain(&model, &init, opts.max_states)?;
    report.n_states = Some(chain.n_states());
    report.exact = Some(answer);
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    input: String,
    init: Option<Vec<u32>>,
    query: QueryArg,
    edge: usize,
    target: Option<Vec<u32>>,
    confidence: f64,
    width: f64,
    seed: u64,
    workers: Option<usize>,
    max_samples: u64,
) -> Result<RunReport, CliError> {
    let model = load_model(&input, init.as_deref())?;
    let init = initial_state(&model, init);
    let query = build_query(query, edge, target)?;
    let plan = SamplingPlan {
        delta: confidence,
        width,
        seed,
        max_samples,
        workers,
    };
    let mut report = RunReport::new("simulate", &model);
    report.engine = Some("statistical".into());
    report.initial = Some(init.clone());
    report.query = Some(query.clone());
    report.seed = Some(seed);
    let est = estimate(&model, &init, &query, &plan)?;
    if matches!(query, Query::PopInc) {
        report.violation_probability = Some(1.0 - est.mean);
    }
    report.estimate = Some(est);
    Ok(report)
}

fn cmd_info(input: String, init: Option<Vec<u32>>) -> Result<RunReport, CliError> {
    let model = load_model(&input, init.as_deref())?;
    let init = initial_state(&model, init);
    let mut report = RunReport::new("info", &model);
    report.initial = Some(init.clone());
    report.compartments = Some(model.compartments.clone());
    report.edge_details = Some(
        model
            .edges
            .iter()
            .enumerate()
            .map(|(index, e)| EdgeInfo {
                index,
                from: model.compartments[e.src].clone(),
                to: model.compartments[e.trg].clone(),
                rate: match &e.label {
                    inform::model::EdgeLabel::Constant(r) => r.to_decimal_string(),
                    inform::model::EdgeLabel::Dependent(v) => v
                        .iter()
                        .map(|(k, r)| format!("{}*{}", r.to_decimal_string(), model.compartments[*k]))
                        .collect::<Vec<_>>()
                        .join(" + "),
                },
                probability: success_probability(&model, e, &init),
            })
            .collect(),
    );
    // multiset upper bound: distribute pop over n compartments, plus sink
    let n = model.n_compartments() as f64;
    let pop = f64::from(model.pop);
    let mut estimate = 1.0;
    for i in 0..model.n_compartments() - 1 {
        estimate *= (pop + n - 1.0 - i as f64) / (i as f64 + 1.0);
    }
    report.state_space_estimate = Some(estimate + 1.0);
    if model.infectious_set.is_empty() {
        report
            .warnings
            .push("infectious set is empty; end-of-epidemic queries hold immediately".into());
    }
    // round-trip check so the reported hash matches what compile would write
    debug_assert!(parse_cms(&serialize_cms(&model)).is_ok());
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let started = Instant::now();
    let (result, human) = match cli.command {
        Command::Compile { input, init, out } => (cmd_compile(input, init, out), false),
        Command::Check {
            input,
            init,
            query,
            edge,
            target,
            tol,
            max_states,
            human,
        } => (
            cmd_check(input, init, query, edge, target, tol, max_states),
            human,
        ),
        Command::Simulate {
            input,
            init,
            query,
            edge,
            target,
            confidence,
            width,
            seed,
            workers,
            max_samples,
            human,
        } => (
            cmd_simulate(
                input, init, query, edge, target, confidence, width, seed, workers, max_samples,
            ),
            human,
        ),
        Command::Info { input, init, human } => (cmd_info(input, init), human),
    };
    match result {
        Ok(mut report) => {
            report.wall_ms = started.elapsed().as_millis();
            emit(&report, human);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
