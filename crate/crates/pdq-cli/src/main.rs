//! `pdq`: classify and evaluate Boolean conjunctive queries over
//! tuple-independent probabilistic structures.

mod render;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use pdq_core::corpus::{corpus, parse_corpus, CorpusEntry, EntryKind};
use pdq_core::evalptime::{self, EvalError, Method as EvalMethod};
use pdq_core::hiercov::{strict_coverage, CoverageError};
use pdq_core::invclass::{classify, ClassifyError, Complexity, Reason, Verdict};
use pdq_core::pstruct::{
    complete_structure, mc_eval, oracle_eval, random_structure, ProbStructure, RandomSpec,
    StructError, DEFAULT_ORACLE_CAP,
};
use pdq_core::qcore::{parse_query, parse_query_file, Query};

use render::{decimal, rational};

const EXIT_USAGE: u8 = 1;
const EXIT_CAP: u8 = 2;
const EXIT_EXPECTATION: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "pdq",
    version,
    about = "Dichotomy classification and exact evaluation of conjunctive queries"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify queries as PTIME or #P-hard.
    Classify(Common),
    /// Evaluate p(q) on a structure.
    Eval(Common),
    /// Evaluate p(q) by enumerating possible worlds.
    Oracle(Common),
    /// Estimate p(q) by sampling worlds.
    Mc(Common),
    /// Time evaluation on complete structures of growing size.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Domain sizes to run.
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        sizes: Vec<usize>,
    },
    /// Run the query corpus and check every expectation.
    Corpus {
        #[command(flatten)]
        common: Common,
        /// Corpus file (defaults to the built-in one).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Random structures per PTIME entry compared against the oracle.
        #[arg(long, default_value_t = 5)]
        structures: usize,
    },
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Query text, e.g. "R(x),S(x,y)". May also be given positionally.
    #[arg(short, long)]
    query: Option<String>,
    #[arg(value_name = "QUERY", conflicts_with = "query")]
    positional: Option<String>,
    /// File with one query per line.
    #[arg(long)]
    query_file: Option<PathBuf>,
    /// Structure file: `Rel<TAB>a,b<TAB>p` per line.
    #[arg(short, long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    /// Maximum number of relevant tuples the oracle may enumerate.
    #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
    oracle_cap: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Include the coverage used by the classifier.
    #[arg(long)]
    explain: bool,
    /// Include the arithmetic formula as JSON.
    #[arg(long)]
    emit_formula: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MethodArg {
    Auto,
    Safeplan,
    Invfree,
    General,
    Oracle,
    Mc,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Text,
    Json,
}

/// A failed expectation; reported with exit code 3.
#[derive(Debug)]
struct ExpectationFailed(usize);

impl std::fmt::Display for ExpectationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} expectation(s) failed", self.0)
    }
}

impl std::error::Error for ExpectationFailed {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ExpectationFailed>() {
            return EXIT_EXPECTATION;
        }
        if let Some(StructError::CapExceeded { .. }) = cause.downcast_ref() {
            return EXIT_CAP;
        }
        if let Some(ClassifyError::ClosureCap(_)) = cause.downcast_ref() {
            return EXIT_CAP;
        }
        if let Some(EvalError::MemberCap(_)) = cause.downcast_ref() {
            return EXIT_CAP;
        }
        if let Some(c) = cause.downcast_ref::<CoverageError>() {
            if matches!(
                c,
                CoverageError::BranchCap { .. }
                    | CoverageError::CoverCap(_)
                    | CoverageError::EventCap { .. }
            ) {
                return EXIT_CAP;
            }
        }
    }
    EXIT_USAGE
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Classify(c) => cmd_classify(&c),
        Command::Eval(c) => cmd_eval(&c, c.method),
        Command::Oracle(c) => cmd_eval(&c, MethodArg::Oracle),
        Command::Mc(c) => cmd_eval(&c, MethodArg::Mc),
        Command::Bench { common, sizes } => cmd_bench(&common, &sizes),
        Command::Corpus {
            common,
            corpus,
            structures,
        } => cmd_corpus(&common, corpus, structures),
    }
}

fn queries(c: &Common) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    if let Some(text) = c.query.as_ref().or(c.positional.as_ref()) {
        out.push(parse_query(text).with_context(|| format!("parsing query {text:?}"))?);
    }
    if let Some(path) = &c.query_file {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        out.extend(parse_query_file(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    if out.is_empty() {
        bail!("no query given (use -q or --query-file)");
    }
    Ok(out)
}

fn structure(c: &Common) -> Result<ProbStructure> {
    let Some(path) = &c.data else {
        bail!("no structure given (use -d)")
    };
    ProbStructure::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn explain(q: &Query) -> Value {
    match strict_coverage(q) {
        Ok(c) if c.factors.len() <= 24 => c.explain_json(),
        Ok(c) => json!({ "factors": c.factors.len(), "note": "too many factors to list N" }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn cmd_classify(c: &Common) -> Result<()> {
    let mut out = Vec::new();
    for q in queries(c)? {
        let v = classify(&q).with_context(|| format!("classifying {q}"))?;
        match c.format {
            Format::Text => {
                println!("{}: {v}", v.query);
                if c.explain {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&explain(&q)).expect("serializable")
                    );
                }
            }
            Format::Json => {
                let mut j = serde_json::to_value(&v).expect("serializable");
                if c.explain {
                    j["coverage"] = explain(&q);
                }
                out.push(j);
            }
        }
    }
    if c.format == Format::Json {
        print_json(&Value::Array(out));
    }
    Ok(())
}

/// The evaluator `auto` resolves to, or `None` for hard queries.
fn resolve_auto(v: &Verdict) -> Option<MethodArg> {
    match (v.complexity, v.reason) {
        (Complexity::SharpPHard, _) => None,
        (_, Reason::NoSelfJoin) => Some(MethodArg::Safeplan),
        (_, Reason::InversionFree) => Some(MethodArg::Invfree),
        _ => Some(MethodArg::General),
    }
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Auto => "auto",
        MethodArg::Safeplan => "safeplan",
        MethodArg::Invfree => "invfree",
        MethodArg::General => "general",
        MethodArg::Oracle => "oracle",
        MethodArg::Mc => "mc",
    }
}

fn eval_method(m: MethodArg) -> EvalMethod {
    match m {
        MethodArg::Safeplan => EvalMethod::SafePlan,
        MethodArg::Invfree => EvalMethod::InversionFree,
        MethodArg::General => EvalMethod::General,
        _ => EvalMethod::Auto,
    }
}

fn eval_one(c: &Common, q: &Query, s: &ProbStructure, method: MethodArg) -> Result<Value> {
    let mut method = method;
    let mut verdict = None;
    if method == MethodArg::Auto {
        let v = classify(q).with_context(|| format!("classifying {q}"))?;
        method = match resolve_auto(&v) {
            Some(m) => m,
            None => {
                eprintln!("warning: {q} is #P-hard; falling back to Monte Carlo");
                MethodArg::Mc
            }
        };
        verdict = Some(v);
    }
    let mut j = json!({ "query": q.to_string(), "method": method_name(method) });
    match method {
        MethodArg::Oracle => {
            let p = oracle_eval(q, s, c.oracle_cap)?;
            j["value"] = json!(rational(&p));
            j["decimal"] = json!(decimal(&p));
        }
        MethodArg::Mc => {
            let m = mc_eval(q, s, c.samples, c.seed);
            j["estimate"] = json!(m.estimate);
            j["stderr"] = json!(m.stderr);
            j["samples"] = json!(m.samples);
            j["seed"] = json!(c.seed);
        }
        _ => {
            let (dag, root) = evalptime::eval_formula(q, s, eval_method(method))?;
            let p = dag.eval(root, s);
            j["value"] = json!(rational(&p));
            j["decimal"] = json!(decimal(&p));
            j["formula_size"] = json!(dag.size(root));
            j["formula_nodes_built"] = json!(dag.total_nodes());
            if c.emit_formula {
                j["formula"] = dag.to_json(root);
            }
        }
    }
    if let Some(v) = verdict {
        j["class"] = serde_json::to_value(v.complexity).expect("serializable");
    }
    if c.explain {
        j["coverage"] = explain(q);
    }
    Ok(j)
}

fn print_eval_text(j: &Value) {
    let q = j["query"].as_str().unwrap_or_default();
    let m = j["method"].as_str().unwrap_or_default();
    if let Some(v) = j["value"].as_str() {
        println!(
            "{q}: {v} ({}) [{m}]",
            j["decimal"].as_str().unwrap_or_default()
        );
    } else {
        println!(
            "{q}: ~{:.6} +- {:.6} [{m}, {} samples, seed {}]",
            j["estimate"].as_f64().unwrap_or(f64::NAN),
            j["stderr"].as_f64().unwrap_or(f64::NAN),
            j["samples"],
            j["seed"]
        );
    }
    if let Some(n) = j.get("formula_size") {
        println!("  formula size {n}");
    }
    if let Some(f) = j.get("formula") {
        println!("{}", serde_json::to_string(f).expect("serializable"));
    }
    if let Some(cv) = j.get("coverage") {
        println!(
            "{}",
            serde_json::to_string_pretty(cv).expect("serializable")
        );
    }
}

fn cmd_eval(c: &Common, method: MethodArg) -> Result<()> {
    let s = structure(c)?;
    let mut out = Vec::new();
    for q in queries(c)? {
        let j = eval_one(c, &q, &s, method).with_context(|| format!("evaluating {q}"))?;
        match c.format {
            Format::Text => print_eval_text(&j),
            Format::Json => out.push(j),
        }
    }
    if c.format == Format::Json {
        print_json(&Value::Array(out));
    }
    Ok(())
}

fn cmd_bench(c: &Common, sizes: &[usize]) -> Result<()> {
    let qs = if c.query.is_some() || c.positional.is_some() || c.query_file.is_some() {
        queries(c)?
    } else {
        vec![
            parse_query("R(x),S(x,y)")?,
            parse_query("P(x),R(x,y),R(x1,y1),S(x1)")?,
        ]
    };
    let method = match c.method {
        MethodArg::Oracle | MethodArg::Mc => bail!("bench runs the exact evaluators only"),
        m => m,
    };
    let mut rows = Vec::new();
    for q in &qs {
        for &n in sizes {
            let s = complete_structure(q, n);
            let t = Instant::now();
            let (dag, root) = evalptime::eval_formula(q, &s, eval_method(method))
                .with_context(|| format!("{q}"))?;
            let build = t.elapsed();
            let t = Instant::now();
            let p = dag.eval(root, &s);
            let evaluate = t.elapsed();
            rows.push(json!({
                "query": q.to_string(),
                "n": n,
                "tuples": s.len(),
                "method": method_name(method),
                "build_ms": build.as_secs_f64() * 1e3,
                "eval_ms": evaluate.as_secs_f64() * 1e3,
                "formula_size": dag.size(root),
                "decimal": decimal(&p),
            }));
        }
    }
    match c.format {
        Format::Json => print_json(&Value::Array(rows)),
        Format::Text => {
            println!(
                "{:<36} {:>4} {:>7} {:>9} {:>10} {:>10} {:>9}",
                "query", "N", "tuples", "method", "build ms", "eval ms", "size"
            );
            for r in rows {
                println!(
                    "{:<36} {:>4} {:>7} {:>9} {:>10.2} {:>10.2} {:>9}",
                    r["query"].as_str().unwrap_or_default(),
                    r["n"],
                    r["tuples"],
                    r["method"].as_str().unwrap_or_default(),
                    r["build_ms"].as_f64().unwrap_or(0.0),
                    r["eval_ms"].as_f64().unwrap_or(0.0),
                    r["formula_size"]
                );
            }
        }
    }
    Ok(())
}

/// Checks one entry: its label, and for PTIME entries exact agreement with
/// the oracle on random structures.
fn check_entry(
    e: &CorpusEntry,
    c: &Common,
    structures: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Value> {
    let v = classify(&e.query).with_context(|| format!("classifying {}", e.name))?;
    let label_ok = v.complexity == e.expect;
    let mut oracle_checks = 0;
    let mut oracle_fail = Vec::new();
    if v.complexity == Complexity::Ptime {
        let spec = RandomSpec {
            domain: 3,
            max_tuples: 12,
            max_den: 16,
        };
        for i in 0..structures {
            let s = random_structure(&e.query, spec, 2, rng);
            let want = oracle_eval(&e.query, &s, c.oracle_cap)?;
            let got = evalptime::eval(&e.query, &s, EvalMethod::Auto)?;
            oracle_checks += 1;
            if got != want {
                oracle_fail.push(i);
            }
        }
    }
    let status = match (label_ok && oracle_fail.is_empty(), e.kind) {
        (true, _) => "pass",
        (false, EntryKind::Known) if oracle_fail.is_empty() => "known",
        (false, _) => "fail",
    };
    Ok(json!({
        "name": e.name,
        "query": e.query.to_string(),
        "kind": format!("{:?}", e.kind).to_lowercase(),
        "expected": e.expect,
        "got": v.complexity,
        "reason": v.reason,
        "oracle_checks": oracle_checks,
        "oracle_mismatches": oracle_fail,
        "status": status,
    }))
}

fn cmd_corpus(c: &Common, path: Option<PathBuf>, structures: usize) -> Result<()> {
    let entries = match &path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_corpus(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => corpus(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut rows = Vec::new();
    for e in &entries {
        rows.push(check_entry(e, c, structures, &mut rng)?);
    }
    let failed = rows.iter().filter(|r| r["status"] == "fail").count();
    match c.format {
        Format::Json => print_json(&json!({ "entries": rows, "failed": failed })),
        Format::Text => {
            for r in &rows {
                println!(
                    "{:<5} {:<24} expected {:<12} got {:<12} oracle {}/{}",
                    r["status"].as_str().unwrap_or_default().to_uppercase(),
                    r["name"].as_str().unwrap_or_default(),
                    r["expected"].as_str().unwrap_or_default(),
                    r["got"].as_str().unwrap_or_default(),
                    r["oracle_checks"].as_u64().unwrap_or(0)
                        - r["oracle_mismatches"]
                            .as_array()
                            .map_or(0, |a| a.len() as u64),
                    r["oracle_checks"]
                );
            }
            println!("{} entries, {failed} failed", rows.len());
        }
    }
    if failed > 0 {
        return Err(ExpectationFailed(failed).into());
    }
    Ok(())
}
