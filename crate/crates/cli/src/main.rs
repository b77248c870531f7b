//! Command-line interface for the relational-autocompletion pipeline:
//! transforming tables to facts, learning joint model programs (directly or
//! with stochastic EM under missing data), completing query cells, answering
//! conditional queries, scoring predictions, and validating programs.
//!
//! Exit codes: 0 on success, 1 for usage errors, 2 for data or validation
//! problems, 3 for numerical failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dclearn::data::{
    cells_to_csv, transform_tables, BiasSpec, Cell, CellRef, TableBundle, Transform,
};
use dclearn::dist::{Distribution, Value};
use dclearn::em::{cell_atom, observed_evidence, run_stochastic_em, EmOptions};
use dclearn::engine::{
    estimate_conditional, predictive_distribution, relevant_evidence, Evidence, KB,
};
use dclearn::error::Error;
use dclearn::eval::{auc_total, nrmse, point_prediction, wpll, MetricRow};
use dclearn::learner::{learn_jmp, LearnParams};
use dclearn::rng::mix;
use dclearn::syntax::{parse_program, parse_query, validate_program, AttrKind, Item, Program, Severity, Sym};

#[derive(Parser)]
#[command(name = "dclearn", version, about = "Learning and inference for distributional-clause programs over relational tables")]
struct Cli {
    /// Cap the number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct TableArgs {
    /// Declarative-bias file with type, rand, rank, and mode declarations.
    #[arg(long)]
    bias: PathBuf,
    /// Directory holding one `<table>.csv` per schema table.
    #[arg(long)]
    tables: PathBuf,
}

#[derive(Args)]
struct LearnArgs {
    #[command(flatten)]
    data: TableArgs,
    /// Program file to write; a learning report goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Seed for all randomized steps.
    #[arg(long)]
    seed: u64,
    /// Minimum score gain a split must reach.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Maximum tree depth.
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    /// Maximum number of body literals per clause.
    #[arg(long, default_value_t = 6)]
    max_body: usize,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Turn tables into facts plus missing- and query-cell lists.
    Transform {
        #[command(flatten)]
        data: TableArgs,
        /// Directory for `facts.dc`, `missing.csv`, and `queries.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing output files.
        #[arg(long)]
        force: bool,
    },
    /// Learn a joint model program from the tables.
    Learn {
        #[command(flatten)]
        learn: LearnArgs,
    },
    /// Learn under missing data with stochastic EM.
    LearnEm {
        #[command(flatten)]
        learn: LearnArgs,
        /// Number of EM iterations.
        #[arg(long, default_value_t = 5)]
        em_iters: usize,
        /// Number of weighted particles per E step.
        #[arg(long, default_value_t = 50)]
        em_particles: usize,
    },
    /// Fill every query cell with its most likely value under a program.
    Complete {
        #[command(flatten)]
        data: TableArgs,
        /// Program file defining every attribute.
        #[arg(long)]
        program: PathBuf,
        /// Directory for the completed tables and `predictions.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Seed for all randomized steps.
        #[arg(long)]
        seed: u64,
        /// Number of sampled worlds per cell.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Overwrite existing output files.
        #[arg(long)]
        force: bool,
    },
    /// Estimate a conditional query against a program.
    Query {
        /// Program file to query.
        #[arg(long)]
        program: PathBuf,
        /// Query text, `query N :: goal, ... | evidence, ...`.
        #[arg(long)]
        query: String,
        /// Seed for all randomized steps.
        #[arg(long)]
        seed: u64,
    },
    /// Score a program's predictions for the query cells against truth tables.
    Eval {
        #[command(flatten)]
        data: TableArgs,
        /// Program file defining every attribute.
        #[arg(long)]
        program: PathBuf,
        /// Directory of fully observed tables holding the true cell values.
        #[arg(long)]
        truth: PathBuf,
        /// Metrics CSV file; written to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for all randomized steps.
        #[arg(long)]
        seed: u64,
        /// Number of sampled worlds per cell.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Overwrite existing output files.
        #[arg(long)]
        force: bool,
    },
    /// Parse and validate a program, printing one line per diagnostic.
    Validate {
        /// Program file to check.
        #[arg(long)]
        program: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    if let Some(threads) = cli.threads {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        if let Err(e) = pool {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<u8, Error> {
    match cmd {
        Cmd::Transform { data, out, force } => cmd_transform(&data, &out, force),
        Cmd::Learn { learn } => cmd_learn(&learn),
        Cmd::LearnEm { learn, em_iters, em_particles } => {
            cmd_learn_em(&learn, em_iters, em_particles)
        }
        Cmd::Complete { data, program, out, seed, samples, force } => {
            cmd_complete(&data, &program, &out, seed, samples, force)
        }
        Cmd::Query { program, query, seed } => cmd_query(&program, &query, seed),
        Cmd::Eval { data, program, truth, out, seed, samples, force } => {
            cmd_eval(&data, &program, &truth, out.as_deref(), seed, samples, force)
        }
        Cmd::Validate { program } => cmd_validate(&program),
    }
}

/// A loaded database: parsed bias, table rows, and their fact form.
struct Loaded {
    bias: BiasSpec,
    bundle: TableBundle,
    transform: Transform,
}

fn load(data: &TableArgs) -> Result<Loaded, Error> {
    let bias = BiasSpec::parse(&Error::read_to_string(&data.bias)?)?;
    let bundle = TableBundle::load(&bias.schema, &data.tables)?;
    let transform = transform_tables(&bundle);
    Ok(Loaded { bias, bundle, transform })
}

fn load_program(path: &Path) -> Result<Program, Error> {
    Ok(parse_program(&Error::read_to_string(path)?)?)
}

fn write_file(path: &Path, text: &str, force: bool) -> Result<(), Error> {
    if path.exists() && !force {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            message: "output file exists; pass --force to overwrite".to_string(),
        });
    }
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn ensure_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn cmd_transform(data: &TableArgs, out: &Path, force: bool) -> Result<u8, Error> {
    let loaded = load(data)?;
    ensure_dir(out)?;
    write_file(&out.join("facts.dc"), &loaded.transform.to_program().to_string(), force)?;
    write_file(&out.join("missing.csv"), &cells_to_csv(&loaded.transform.missing), force)?;
    write_file(&out.join("queries.csv"), &cells_to_csv(&loaded.transform.query), force)?;
    Ok(0)
}

fn learn_params(args: &LearnArgs) -> LearnParams {
    LearnParams {
        epsilon: args.epsilon,
        max_depth: args.max_depth,
        max_body: args.max_body,
        seed: args.seed,
        ..LearnParams::default()
    }
}

fn cmd_learn(args: &LearnArgs) -> Result<u8, Error> {
    let loaded = load(&args.data)?;
    let learned = learn_jmp(&loaded.transform.to_program(), &loaded.bias, &learn_params(args))?;
    write_file(&args.out, &learned.program.to_string(), args.force)?;
    write_file(&args.out.with_extension("report"), &learned.report, args.force)?;
    Ok(0)
}

fn cmd_learn_em(args: &LearnArgs, em_iters: usize, em_particles: usize) -> Result<u8, Error> {
    let loaded = load(&args.data)?;
    let missing: Vec<_> = loaded.transform.missing.iter().map(cell_atom).collect();
    let opts = EmOptions {
        iters: em_iters,
        particles: em_particles,
        seed: args.seed,
        learn: learn_params(args),
    };
    let run = run_stochastic_em(&loaded.transform.to_program(), &missing, &loaded.bias, &opts)?;
    write_file(&args.out, &run.program.to_string(), args.force)?;
    write_file(&args.out.with_extension("report"), &run.report, args.force)?;
    let mut trace = String::from("iteration,loglik\n");
    for (i, ll) in run.trace.iter().enumerate() {
        trace.push_str(&format!("{i},{ll}\n"));
    }
    write_file(&args.out.with_extension("trace.csv"), &trace, args.force)?;
    Ok(0)
}

/// Inference program for a database: the model's clauses over the database's
/// own relational facts. Bare relational facts in the model are dropped so
/// that the tables, not the training run, define the entities and links.
fn completion_kb(model: &Program, transform: &Transform) -> KB {
    let mut items: Vec<Item> = Vec::new();
    items.extend(transform.entity_facts.iter().cloned().map(Item::Def));
    items.extend(transform.link_facts.iter().cloned().map(Item::Def));
    for item in &model.items {
        match item {
            Item::Def(d) if d.body.is_empty() => {}
            _ => items.push(item.clone()),
        }
    }
    KB::new(Program::new(items))
}

/// Predictive distribution per query cell, conditioned on the relevant
/// observed cells; `None` when every sampled world contradicts the evidence.
fn predict_query_cells(
    kb: &KB,
    transform: &Transform,
    evidence: &Evidence,
    samples: usize,
    seed: u64,
) -> Result<Vec<(CellRef, Option<Distribution>)>, Error> {
    let mut out = Vec::with_capacity(transform.query.len());
    for (i, cell) in transform.query.iter().enumerate() {
        let atom = cell_atom(cell);
        let pruned = relevant_evidence(kb, &atom, evidence)?;
        match predictive_distribution(kb, &atom, &pruned, samples, mix(seed, i as u64)) {
            Ok(d) => out.push((cell.clone(), Some(d))),
            Err(Error::ZeroEvidenceWeight { .. }) => out.push((cell.clone(), None)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn dist_text(d: &Distribution) -> String {
    match d {
        Distribution::Val(v) => format!("val({v})"),
        Distribution::Gaussian { mean, variance } => format!("gaussian({mean},{variance})"),
        Distribution::Discrete(entries) => {
            let parts: Vec<String> =
                entries.iter().map(|(v, p)| format!("{p}:{v}")).collect();
            format!("discrete([{}])", parts.join(","))
        }
    }
}

fn cmd_complete(
    data: &TableArgs,
    program: &Path,
    out: &Path,
    seed: u64,
    samples: usize,
    force: bool,
) -> Result<u8, Error> {
    let loaded = load(data)?;
    let model = load_program(program)?;
    let kb = completion_kb(&model, &loaded.transform);
    let evidence = observed_evidence(&loaded.transform.to_program(), &loaded.bias);
    let predictions = predict_query_cells(&kb, &loaded.transform, &evidence, samples, seed)?;

    let mut completed = loaded.bundle.clone();
    let mut sidecar = csv::Writer::from_writer(Vec::new());
    sidecar
        .write_record(["table", "key", "attribute", "status", "distribution"])
        .unwrap();
    for (cell, dist) in &predictions {
        let (status, text) = match dist {
            Some(d) => {
                *completed.cell_mut(cell)? = Cell::Observed(point_prediction(d));
                ("filled", dist_text(d))
            }
            None => {
                *completed.cell_mut(cell)? = Cell::Missing;
                ("failed", String::new())
            }
        };
        sidecar
            .write_record([cell.table.as_ref(), cell.key.as_str(), cell.attr.as_ref(), status, &text])
            .unwrap();
    }
    ensure_dir(out)?;
    for (name, text) in completed.to_csv_strings() {
        write_file(&out.join(name), &text, force)?;
    }
    let sidecar = String::from_utf8(sidecar.into_inner().unwrap()).unwrap();
    write_file(&out.join("predictions.csv"), &sidecar, force)?;
    Ok(0)
}

fn cmd_query(program: &Path, query: &str, seed: u64) -> Result<u8, Error> {
    let kb = KB::new(load_program(program)?);
    let spec = parse_query(query)?;
    let mut evidence = Evidence::default();
    for (atom, term) in &spec.evidence {
        let value = Value::from_term(term).ok_or_else(|| {
            Error::TypeMismatch(format!("evidence for {atom} must be a constant or number"))
        })?;
        evidence.insert(atom.clone(), value);
    }
    let output = if let Some(rv) = &spec.predictive {
        let dist = predictive_distribution(&kb, rv, &evidence, spec.n, seed)?;
        serde_json::json!({
            "rv": rv.to_string(),
            "n_samples": spec.n,
            "distribution": dist_text(&dist),
        })
    } else {
        let est = estimate_conditional(&kb, &spec.goal, &evidence, spec.n, seed)?;
        serde_json::json!({
            "estimate": est.estimate,
            "n_samples": est.n_samples,
            "effective_evidence_weight": est.effective_evidence_weight,
        })
    };
    println!("{output}");
    Ok(0)
}

fn truth_values(
    loaded: &Loaded,
    truth_dir: &Path,
) -> Result<Vec<(CellRef, Value)>, Error> {
    let truth_bundle = TableBundle::load(&loaded.bias.schema, truth_dir)?;
    let truth = transform_tables(&truth_bundle);
    let mut observed: std::collections::HashMap<(Sym, String), Value> = Default::default();
    for fact in &truth.attribute_facts {
        if let dclearn::syntax::DistExpr::Val(t) = &fact.dist {
            if let (Some(v), dclearn::syntax::Term::Const(key)) = (Value::from_term(t), &fact.head.args[0]) {
                observed.insert((fact.head.pred.clone(), key.to_string()), v);
            }
        }
    }
    loaded
        .transform
        .query
        .iter()
        .map(|cell| {
            observed
                .get(&(cell.attr.clone(), cell.key.clone()))
                .cloned()
                .map(|v| (cell.clone(), v))
                .ok_or_else(|| Error::Malformed {
                    path: truth_dir.to_path_buf(),
                    message: format!("truth tables do not observe {cell}"),
                })
        })
        .collect()
}

fn cmd_eval(
    data: &TableArgs,
    program: &Path,
    truth_dir: &Path,
    out: Option<&Path>,
    seed: u64,
    samples: usize,
    force: bool,
) -> Result<u8, Error> {
    let loaded = load(data)?;
    let model = load_program(program)?;
    let kb = completion_kb(&model, &loaded.transform);
    let evidence = observed_evidence(&loaded.transform.to_program(), &loaded.bias);
    let truths = truth_values(&loaded, truth_dir)?;
    let predictions = predict_query_cells(&kb, &loaded.transform, &evidence, samples, seed)?;

    let mut wpll_evidence = evidence.clone();
    for (cell, value) in &truths {
        wpll_evidence.insert(cell_atom(cell), value.clone());
    }

    let mut rows: Vec<MetricRow> = Vec::new();
    let attrs: Vec<Sym> = loaded
        .bias
        .schema
        .entities
        .iter()
        .flat_map(|t| t.attributes.iter().map(|a| a.name.clone()))
        .collect();
    for (ai, attr) in attrs.iter().enumerate() {
        let scored: Vec<(&CellRef, &Distribution, &Value)> = predictions
            .iter()
            .zip(&truths)
            .filter(|((cell, _), _)| cell.attr == *attr)
            .filter_map(|((cell, dist), (_, truth))| dist.as_ref().map(|d| (cell, d, truth)))
            .collect();
        if scored.is_empty() {
            continue;
        }
        match loaded.bias.attr_kind(attr).cloned() {
            Some(AttrKind::Continuous) => {
                let preds: Vec<f64> = scored
                    .iter()
                    .filter_map(|(_, d, _)| point_prediction(d).as_num())
                    .collect();
                let truth_nums: Vec<f64> =
                    scored.iter().filter_map(|(_, _, t)| t.as_num()).collect();
                let observed: Vec<f64> = evidence
                    .iter()
                    .filter(|(a, _)| a.pred == *attr)
                    .filter_map(|(_, v)| v.as_num())
                    .collect();
                let range = observed.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - observed.iter().cloned().fold(f64::INFINITY, f64::min);
                rows.push(MetricRow {
                    attribute: attr.clone(),
                    metric: "nrmse",
                    value: nrmse(&preds, &truth_nums, range)?,
                    n: preds.len(),
                });
            }
            Some(AttrKind::Discrete(labels)) => {
                let scores: Vec<Vec<f64>> = scored
                    .iter()
                    .map(|(_, d, _)| {
                        labels
                            .iter()
                            .map(|l| match d {
                                Distribution::Discrete(entries) => entries
                                    .iter()
                                    .find(|(v, _)| matches!(v, Value::Sym(s) if s == l))
                                    .map_or(0.0, |(_, p)| *p),
                                _ => 0.0,
                            })
                            .collect()
                    })
                    .collect();
                let truth_labels: Vec<Sym> = scored
                    .iter()
                    .filter_map(|(_, _, t)| t.as_sym().cloned())
                    .collect();
                rows.push(MetricRow {
                    attribute: attr.clone(),
                    metric: "auc",
                    value: auc_total(&labels, &scores, &truth_labels)?,
                    n: scores.len(),
                });
            }
            None => continue,
        }
        let cells: Vec<_> = truths
            .iter()
            .filter(|(cell, _)| cell.attr == *attr)
            .map(|(cell, v)| (cell_atom(cell), v.clone()))
            .collect();
        rows.push(MetricRow {
            attribute: attr.clone(),
            metric: "wpll",
            value: wpll(&kb, &cells, &wpll_evidence, samples, mix(seed, u64::MAX - ai as u64))?,
            n: cells.len(),
        });
    }

    let mut report = String::from("attribute,metric,value,n\n");
    for row in &rows {
        report.push_str(&row.csv_line());
        report.push('\n');
    }
    match out {
        Some(path) => write_file(path, &report, force)?,
        None => print!("{report}"),
    }
    Ok(0)
}

fn cmd_validate(path: &Path) -> Result<u8, Error> {
    let text = Error::read_to_string(path)?;
    let program = match parse_program(&text) {
        Ok(p) => p,
        Err(e) => {
            println!("{}:{}", path.display(), e);
            return Ok(2);
        }
    };
    let diagnostics = validate_program(&program);
    for d in &diagnostics {
        println!("{}:{}", path.display(), d);
    }
    if diagnostics.iter().any(|d| matches!(d.severity, Severity::Error)) {
        Ok(2)
    } else {
        Ok(0)
    }
}
