//! `acurank` command line: rerank TREC runs with the adaptive scheduler or
//! a fixed-budget baseline, generate and score synthetic benchmarks, and
//! evaluate run files against relevance judgments.
//!
//! Exit codes follow the error taxonomy: 2 for configuration problems,
//! 3 for data problems, 4 for backend failures.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use acurank_core::backend::{HttpReranker, NoisyReranker, OracleReranker, Reranker};
use acurank_core::baselines::{SlidingWindowConfig, TourRankConfig, TrueSkillStaticConfig};
use acurank_core::engine::SchedulerConfig;
use acurank_core::io::{self, SyntheticSpec, TraceRecord, TrecRun};
use acurank_core::simulate::{self, Method, MethodSpec, SimBackend, SuiteConfig, SummaryRow};
use acurank_core::{eval, Error, Result};

/// Adaptive listwise reranking with fixed-budget baselines.
#[derive(Parser)]
#[command(name = "acurank", version)]
struct Cli {
    /// Worker threads for query-level parallelism (0 keeps the default).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rerank a TREC run with one method and backend.
    Rerank(RerankArgs),
    /// Generate a synthetic benchmark, run one method, and save everything.
    Simulate(SimulateArgs),
    /// Score a TREC run against relevance judgments.
    Evaluate(EvaluateArgs),
    /// Run several methods on one synthetic benchmark and tabulate them.
    Compare(CompareArgs),
}

/// Method selection shared by rerank, simulate, and compare.
#[derive(Args, Clone)]
struct MethodArgs {
    /// Method to run: acurank, sliding-window, tourrank, or
    /// trueskill-static. Compare takes a comma-separated list; acurank
    /// entries there may carry a call budget, as in acurank@18.
    #[arg(long, default_value = "acurank")]
    method: String,
    /// AcuRank preset: default, h (tighter certainty band), or hh
    /// (tighter band and lower stop threshold).
    #[arg(long, default_value = "default")]
    variant: String,
    /// Call budget for acurank; fixed methods always spend their plan.
    #[arg(long)]
    max_calls: Option<usize>,
    /// Certainty band override for acurank.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Uncertain-count stop threshold override for acurank.
    #[arg(long)]
    tau: Option<usize>,
    /// Ranking cutoff for scheduling and NDCG.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Sliding-window width.
    #[arg(long, default_value_t = 20)]
    window: usize,
    /// Sliding-window stride.
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Sliding-window passes.
    #[arg(long, default_value_t = 1)]
    passes: usize,
    /// TourRank repetitions.
    #[arg(long, default_value_t = 1)]
    tournaments: usize,
    /// Comma-separated stage plan: pool sizes for tourrank, batch counts
    /// for trueskill-static.
    #[arg(long)]
    plan: Option<String>,
}

/// Backend selection for reranking real runs.
#[derive(Args, Clone)]
struct BackendArgs {
    /// Backend answering rerank calls: oracle, noisy, or http.
    #[arg(long, default_value = "oracle")]
    backend: String,
    /// Plackett-Luce temperature for the noisy backend.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Chat-completions endpoint for the http backend.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name for the http backend.
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the http bearer token.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Request timeout in seconds for the http backend.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
}

/// Synthetic benchmark shape shared by simulate and compare.
#[derive(Args, Clone)]
struct DataArgs {
    /// Number of synthetic queries.
    #[arg(long, default_value_t = 200)]
    queries: usize,
    /// Candidates per query.
    #[arg(long, default_value_t = 100)]
    docs: usize,
    /// Comma-separated weights for grades 0,1,2,3; normalized to
    /// probabilities.
    #[arg(long, default_value = "8,4,2,1")]
    grade_dist: String,
    /// Standard deviation of the retrieval-score noise around the grade.
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Lower bound of the per-query reranker temperature range.
    #[arg(long, default_value_t = 0.5)]
    temp_lo: f64,
    /// Upper bound of the per-query reranker temperature range.
    #[arg(long, default_value_t = 2.0)]
    temp_hi: f64,
}

#[derive(Args)]
struct RerankArgs {
    /// First-stage TREC run to rerank.
    #[arg(long)]
    run: PathBuf,
    /// JSONL corpus holding every document the run references.
    #[arg(long)]
    corpus: PathBuf,
    /// TREC qrels; required by the simulated backends, enables NDCG
    /// reporting and trace output.
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Tab-separated query texts (id, then text); ids stand in otherwise.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the reranked run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write per-query JSONL traces (needs --qrels).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Aligned table instead of tab-separated lines.
    #[arg(long)]
    human: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Simulated backend: oracle or noisy.
    #[arg(long, default_value = "noisy")]
    backend: String,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving run.txt, qrels.txt, corpus.jsonl,
    /// temperatures.tsv, traces.jsonl, and summary.csv.
    #[arg(long)]
    out: PathBuf,
    /// Aligned summary table instead of CSV on stdout.
    #[arg(long)]
    human: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// TREC run to score.
    #[arg(long)]
    run: PathBuf,
    /// TREC qrels with relevance grades.
    #[arg(long)]
    qrels: PathBuf,
    /// NDCG cutoff.
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Aligned table instead of tab-separated lines.
    #[arg(long)]
    human: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Simulated backend: oracle or noisy.
    #[arg(long, default_value = "noisy")]
    backend: String,
    /// Master random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the summary CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write per-query JSONL traces.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Aligned summary table on stdout instead of CSV.
    #[arg(long)]
    human: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.jobs > 0 {
        acurank_core::set_worker_threads(cli.jobs)?;
    }
    match cli.command {
        Command::Rerank(args) => cmd_rerank(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

fn cmd_rerank(args: RerankArgs) -> Result<()> {
    if args.qrels.is_none() && matches!(args.backend.backend.as_str(), "oracle" | "noisy") {
        return Err(Error::Config(format!(
            "the {} backend orders by relevance grade; pass --qrels",
            args.backend.backend
        )));
    }
    if args.qrels.is_none() && args.traces.is_some() {
        return Err(Error::Config(
            "--traces records NDCG per query; pass --qrels".into(),
        ));
    }
    let spec = parse_method_token(&args.method.method, &args.method, args.seed)?;
    let backend = build_backend(&args.backend, args.seed)?;

    let (run, warnings) = io::load_run(&args.run)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let corpus = io::load_corpus(&args.corpus)?;
    let qrels = args.qrels.as_deref().map(io::load_qrels).transpose()?;
    let query_text = args.queries.as_deref().map(io::load_queries).transpose()?;
    let tasks = io::assemble_tasks(&run, &corpus, qrels.as_ref(), query_text.as_ref())?;

    let results = simulate::run_batch(&tasks, &spec.method, backend.as_ref());
    let mut rankings = Vec::new();
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (task, result) in tasks.iter().zip(results) {
        let trace = match result {
            Ok(trace) => trace,
            Err(e) => {
                failures.push((task.query_id.clone(), e));
                continue;
            }
        };
        let ndcg = match &qrels {
            Some(q) => {
                match eval::ndcg_at_k(q, &task.query_id, &trace.final_ranking, args.method.k) {
                    Ok(score) => Some(score),
                    Err(e) => {
                        failures.push((task.query_id.clone(), e));
                        continue;
                    }
                }
            }
            None => None,
        };
        // shifted_wig only rejects windows its inputs cannot fill; the
        // filter guarantees the length and the loader finite scores.
        let wig = task
            .retrieval_scores
            .as_deref()
            .filter(|s| s.len() >= eval::WIG_WINDOW)
            .map(|s| simulate::shifted_wig(s, eval::WIG_WINDOW))
            .transpose()?;
        if let Some(score) = ndcg {
            records.push(TraceRecord {
                query_id: task.query_id.clone(),
                method: spec.label.clone(),
                calls: trace.calls_made,
                iterations: trace.iterations,
                ndcg: score,
                wig,
            });
        }
        rows.push((
            task.query_id.clone(),
            trace.calls_made,
            trace.iterations,
            ndcg,
        ));
        rankings.push((task.query_id.clone(), trace.final_ranking));
    }

    // Completed queries are flushed before a partial failure exits.
    if let Some(path) = &args.out {
        io::save_run(path, &TrecRun::from_rankings(&rankings, &spec.label))?;
    }
    if let Some(path) = &args.traces {
        write_file(path, |w| io::write_traces(w, &records))?;
    }
    print_rerank_report(&rows, args.method.k, args.human);

    if !failures.is_empty() {
        for (query_id, e) in &failures {
            eprintln!("error: query {query_id}: {e}");
        }
        std::process::exit(failures[0].1.exit_code());
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let spec = parse_method_token(&args.method.method, &args.method, args.seed)?;
    let config = SuiteConfig {
        data: synthetic_spec(&args.data, args.seed)?,
        methods: vec![spec],
        backend: parse_sim_backend(&args.backend, args.seed)?,
        k: args.method.k,
        wig_window: args.data.docs.min(eval::WIG_WINDOW),
    };
    let outcome = simulate::run_suite(&config)?;

    fs::create_dir_all(&args.out)?;
    io::save_run(&args.out.join("run.txt"), &outcome.data.run)?;
    write_file(&args.out.join("qrels.txt"), |w| {
        io::write_qrels(w, &outcome.data.qrels)
    })?;
    write_file(&args.out.join("corpus.jsonl"), |w| {
        io::write_corpus(w, &outcome.data.corpus)
    })?;
    write_file(&args.out.join("temperatures.tsv"), |w| {
        for (query_id, temperature) in &outcome.data.temperatures {
            writeln!(w, "{query_id}\t{temperature}")?;
        }
        Ok(())
    })?;
    write_file(&args.out.join("traces.jsonl"), |w| {
        io::write_traces(w, &outcome.records)
    })?;
    let csv = simulate::summary_csv(&outcome.summary);
    fs::write(args.out.join("summary.csv"), &csv)?;

    print_summary(&outcome.summary, &csv, args.human);
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (run, warnings) = io::load_run(&args.run)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let qrels = io::load_qrels(&args.qrels)?;
    let mut rows = Vec::new();
    for query_id in run.query_ids() {
        let ranking = run.ranking(query_id).expect("listed query exists");
        let score = eval::ndcg_at_k(&qrels, query_id, &ranking, args.k)?;
        rows.push((query_id.to_string(), score));
    }
    let mean = eval::macro_average(&[rows.iter().map(|r| r.1).collect()])?;
    if args.human {
        let mut table = vec![vec!["query".to_string(), format!("ndcg@{}", args.k)]];
        for (query_id, score) in &rows {
            table.push(vec![query_id.clone(), eval::format_score(100.0 * score)]);
        }
        print_table(&table);
        println!("NDCG@{}: {}", args.k, eval::format_score(100.0 * mean));
    } else {
        for (query_id, score) in &rows {
            println!("{query_id}\t{score:.6}");
        }
        println!("mean\t{mean:.6}");
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let methods = args
        .method
        .method
        .split(',')
        .map(|token| parse_method_token(token.trim(), &args.method, args.seed))
        .collect::<Result<Vec<_>>>()?;
    let config = SuiteConfig {
        data: synthetic_spec(&args.data, args.seed)?,
        methods,
        backend: parse_sim_backend(&args.backend, args.seed)?,
        k: args.method.k,
        wig_window: args.data.docs.min(eval::WIG_WINDOW),
    };
    let outcome = simulate::run_suite(&config)?;
    let csv = simulate::summary_csv(&outcome.summary);
    if let Some(path) = &args.out {
        fs::write(path, &csv)?;
    }
    if let Some(path) = &args.traces {
        write_file(path, |w| io::write_traces(w, &outcome.records))?;
    }
    if args.human || args.out.is_none() {
        print_summary(&outcome.summary, &csv, args.human);
    }
    Ok(())
}

/// Builds a method spec from one token. A bare "acurank" picks up the
/// --variant preset; "acurank@N" caps its budget at N calls.
fn parse_method_token(token: &str, base: &MethodArgs, seed: u64) -> Result<MethodSpec> {
    let (name, budget) = match token.split_once('@') {
        Some((name, raw)) => {
            let budget = raw
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad call budget in method token {token:?}")))?;
            (name, Some(budget))
        }
        None => (token, None),
    };
    if budget.is_some() && !name.starts_with("acurank") {
        return Err(Error::Config(format!(
            "the @budget suffix in {token:?} only applies to acurank"
        )));
    }
    let spec = match name {
        "acurank" | "acurank-h" | "acurank-hh" => {
            let variant = match name {
                "acurank-h" => "h",
                "acurank-hh" => "hh",
                _ => base.variant.as_str(),
            };
            let mut config = SchedulerConfig::variant(variant)?;
            config.k = base.k;
            config.seed = seed;
            if let Some(epsilon) = base.epsilon {
                config.epsilon = epsilon;
            }
            if let Some(tau) = base.tau {
                config.tau = tau;
            }
            config.max_calls = budget.or(base.max_calls);
            config.validate()?;
            let base_label = if name == "acurank" && variant != "default" {
                format!("acurank-{variant}")
            } else {
                name.to_string()
            };
            let label = match budget {
                Some(b) => format!("{base_label}@{b}"),
                None => base_label,
            };
            MethodSpec {
                label,
                budget: config.max_calls,
                method: Method::AcuRank(config),
            }
        }
        _ if name == "sliding-window" || name.starts_with("sliding-window-") => {
            let passes = match name.strip_prefix("sliding-window-") {
                Some(raw) => raw.parse::<usize>().map_err(|_| {
                    Error::Config(format!("bad pass count in method token {token:?}"))
                })?,
                None => base.passes,
            };
            let config = SlidingWindowConfig {
                window: base.window,
                stride: base.stride,
                passes,
            };
            config.validate()?;
            MethodSpec {
                label: name.to_string(),
                budget: None,
                method: Method::SlidingWindow(config),
            }
        }
        "tourrank" => {
            let mut config = TourRankConfig {
                tournaments: base.tournaments,
                seed,
                ..Default::default()
            };
            if let Some(plan) = &base.plan {
                config.plan = parse_plan(plan)?;
            }
            config.validate()?;
            MethodSpec {
                label: name.to_string(),
                budget: None,
                method: Method::TourRank(config),
            }
        }
        "trueskill-static" => {
            let mut config = TrueSkillStaticConfig::default();
            if let Some(plan) = &base.plan {
                config.plan = parse_plan(plan)?;
            }
            config.validate()?;
            MethodSpec {
                label: name.to_string(),
                budget: None,
                method: Method::TrueSkillStatic(config),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown method {other:?}; expected acurank[-h|-hh], \
                 sliding-window[-N], tourrank, or trueskill-static"
            )))
        }
    };
    Ok(spec)
}

fn parse_plan(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|t| {
            t.trim().parse::<usize>().map_err(|_| {
                Error::Config(format!(
                    "bad plan entry {:?}; expected an integer",
                    t.trim()
                ))
            })
        })
        .collect()
}

fn build_backend(args: &BackendArgs, seed: u64) -> Result<Box<dyn Reranker>> {
    match args.backend.as_str() {
        "oracle" => Ok(Box::new(OracleReranker)),
        "noisy" => Ok(Box::new(NoisyReranker::new(args.temperature, seed)?)),
        "http" => {
            let endpoint = args
                .endpoint
                .as_deref()
                .ok_or_else(|| Error::Config("the http backend needs --endpoint".into()))?;
            let model = args
                .model
                .as_deref()
                .ok_or_else(|| Error::Config("the http backend needs --model".into()))?;
            let mut reranker = HttpReranker::new(endpoint, model)?
                .with_timeout(Duration::from_secs(args.timeout))?;
            if let Some(var) = &args.api_key_env {
                reranker = reranker.with_api_key_env(var);
            }
            Ok(Box::new(reranker))
        }
        other => Err(Error::Config(format!(
            "unknown backend {other:?}; expected oracle, noisy, or http"
        ))),
    }
}

fn parse_sim_backend(name: &str, seed: u64) -> Result<SimBackend> {
    match name {
        "oracle" => Ok(SimBackend::Oracle),
        "noisy" => Ok(SimBackend::Noisy { seed }),
        other => Err(Error::Config(format!(
            "unknown simulated backend {other:?}; expected oracle or noisy"
        ))),
    }
}

fn synthetic_spec(args: &DataArgs, seed: u64) -> Result<SyntheticSpec> {
    let weights: Vec<f64> = args
        .grade_dist
        .split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("grade weight {w:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    let [w0, w1, w2, w3]: [f64; 4] = weights.try_into().map_err(|w: Vec<f64>| {
        Error::Config(format!("expected 4 grade weights, got {}", w.len()))
    })?;
    let total = w0 + w1 + w2 + w3;
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Config(format!(
            "grade weights must have a positive finite sum, got {total}"
        )));
    }
    Ok(SyntheticSpec {
        queries: args.queries,
        docs_per_query: args.docs,
        grade_distribution: [w0 / total, w1 / total, w2 / total, w3 / total],
        score_noise: args.noise,
        temperature_range: (args.temp_lo, args.temp_hi),
        seed,
    })
}

fn write_file<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> Result<()>,
{
    let mut writer = BufWriter::new(fs::File::create(path)?);
    write(&mut writer)?;
    writer.flush()?;
    Ok(())
}

fn print_rerank_report(rows: &[(String, usize, usize, Option<f64>)], k: usize, human: bool) {
    if rows.is_empty() {
        return;
    }
    let n = rows.len() as f64;
    let mean_calls = rows.iter().map(|r| r.1 as f64).sum::<f64>() / n;
    let mean_iterations = rows.iter().map(|r| r.2 as f64).sum::<f64>() / n;
    let scored: Vec<f64> = rows.iter().filter_map(|r| r.3).collect();
    let mean_ndcg = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    if human {
        let mut table = vec![vec![
            "query".to_string(),
            "calls".to_string(),
            "iterations".to_string(),
            format!("ndcg@{k}"),
        ]];
        for (query_id, calls, iterations, ndcg) in rows {
            table.push(vec![
                query_id.clone(),
                calls.to_string(),
                iterations.to_string(),
                ndcg.map(|s| eval::format_score(100.0 * s))
                    .unwrap_or_default(),
            ]);
        }
        table.push(vec![
            "mean".to_string(),
            format!("{mean_calls:.2}"),
            format!("{mean_iterations:.2}"),
            mean_ndcg
                .map(|s| eval::format_score(100.0 * s))
                .unwrap_or_default(),
        ]);
        print_table(&table);
    } else {
        for (query_id, calls, iterations, ndcg) in rows {
            let ndcg = ndcg.map(|s| format!("{s:.6}")).unwrap_or_default();
            println!("{query_id}\t{calls}\t{iterations}\t{ndcg}");
        }
        let ndcg = mean_ndcg.map(|s| format!("{s:.6}")).unwrap_or_default();
        println!("mean\t{mean_calls:.4}\t{mean_iterations:.4}\t{ndcg}");
    }
}

fn print_summary(summary: &[SummaryRow], csv: &str, human: bool) {
    if !human {
        print!("{csv}");
        return;
    }
    let mut table = vec![vec![
        "method".to_string(),
        "budget".to_string(),
        "mean_ndcg".to_string(),
        "mean_calls".to_string(),
        "temp_calls_rho".to_string(),
        "p".to_string(),
    ]];
    for row in summary {
        table.push(vec![
            row.method.clone(),
            row.budget.map(|b| b.to_string()).unwrap_or_default(),
            eval::format_score(100.0 * row.mean_ndcg),
            format!("{:.2}", row.mean_calls),
            row.temp_calls_rho
                .map(|r| format!("{r:.3}"))
                .unwrap_or_default(),
            row.temp_calls_p
                .map(|p| format!("{p:.4}"))
                .unwrap_or_default(),
        ]);
    }
    print_table(&table);
}

/// Prints rows as an aligned table: first row is the header, first column
/// is left-aligned, the rest right-aligned.
fn print_table(rows: &[Vec<String>]) {
    let columns = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; columns];
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    for row in rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i == 0 {
                line.push_str(&format!("{:<width$}", cell, width = widths[0]));
            } else {
                line.push_str(&format!("  {:>width$}", cell, width = widths[i]));
            }
        }
        println!("{}", line.trim_end());
    }
}
