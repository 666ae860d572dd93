//! End-to-end simulation harness: generate a synthetic benchmark, run a
//! set of reranking methods over it with a noise-calibrated simulated
//! backend, and summarize quality, cost, and cost correlates per method.

use crate::backend::{NoisyReranker, OracleReranker, Reranker};
use crate::baselines::{
    run_sliding_window, run_tourrank, run_trueskill_static, SlidingWindowConfig, TourRankConfig,
    TrueSkillStaticConfig,
};
use crate::engine::{run_acurank, QueryTask, RunTrace, SchedulerConfig};
use crate::error::{Error, Result};
use crate::eval::{self, Qrels};
use crate::io::{assemble_tasks, generate_synthetic, SyntheticData, SyntheticSpec, TraceRecord};
use crate::par;

/// A reranking method with its configuration.
#[derive(Clone, Debug)]
pub enum Method {
    AcuRank(SchedulerConfig),
    SlidingWindow(SlidingWindowConfig),
    TourRank(TourRankConfig),
    TrueSkillStatic(TrueSkillStaticConfig),
}

/// Runs one method on one query.
pub fn run_method(task: &QueryTask, method: &Method, backend: &dyn Reranker) -> Result<RunTrace> {
    match method {
        Method::AcuRank(config) => run_acurank(task, config, backend),
        Method::SlidingWindow(config) => run_sliding_window(task, config, backend),
        Method::TourRank(config) => run_tourrank(task, config, backend),
        Method::TrueSkillStatic(config) => run_trueskill_static(task, config, backend),
    }
}

/// Runs one method over many queries on the worker pool, one result per
/// task in input order. Failures stay per-query so a bad query does not
/// discard the traces of the ones that finished.
pub fn run_batch(
    tasks: &[QueryTask],
    method: &Method,
    backend: &dyn Reranker,
) -> Vec<Result<RunTrace>> {
    par::map_collect(tasks, |task| run_method(task, method, backend))
}

/// A method plus its reporting identity.
#[derive(Clone, Debug)]
pub struct MethodSpec {
    /// Row label in traces and summaries.
    pub label: String,
    /// Nominal call budget, echoed into the summary for comparison plots.
    pub budget: Option<usize>,
    pub method: Method,
}

/// Which simulated backend answers rerank calls.
#[derive(Clone, Copy, Debug)]
pub enum SimBackend {
    /// Perfect ordering by hidden grade.
    Oracle,
    /// Plackett-Luce sampling at each query's own temperature.
    Noisy { seed: u64 },
}

/// Full simulation request.
#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub data: SyntheticSpec,
    pub methods: Vec<MethodSpec>,
    pub backend: SimBackend,
    /// NDCG cutoff.
    pub k: usize,
    /// Retrieval-score window for the per-query gain summary.
    pub wig_window: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            data: SyntheticSpec::default(),
            methods: Vec::new(),
            backend: SimBackend::Noisy { seed: 0 },
            k: 10,
            wig_window: eval::WIG_WINDOW,
        }
    }
}

/// Per-method aggregate over the whole query set.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub budget: Option<usize>,
    pub mean_ndcg: f64,
    pub mean_calls: f64,
    /// Spearman correlation between per-query temperature and calls;
    /// absent when degenerate (constant calls or too few queries).
    pub temp_calls_rho: Option<f64>,
    pub temp_calls_p: Option<f64>,
}

/// Everything a simulation produces.
#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub data: SyntheticData,
    /// One record per (query, method), queries sorted, methods in input
    /// order within each query.
    pub records: Vec<TraceRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Retrieval-score gain summary with the same positivity shift the belief
/// initializer applies, so noisy scores around zero stay in the log
/// domain.
pub fn shifted_wig(scores: &[f64], window: usize) -> Result<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min <= 0.0 { 0.1 - min } else { 0.0 };
    let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
    eval::wig(&shifted, window)
}

fn record_for(
    task: &QueryTask,
    spec: &MethodSpec,
    backend: &dyn Reranker,
    qrels: &Qrels,
    k: usize,
    wig_window: usize,
) -> Result<TraceRecord> {
    let trace = run_method(task, &spec.method, backend)?;
    let ndcg = eval::ndcg_at_k(qrels, &task.query_id, &trace.final_ranking, k)?;
    let wig = task
        .retrieval_scores
        .as_deref()
        .filter(|scores| scores.len() >= wig_window)
        .map(|scores| shifted_wig(scores, wig_window))
        .transpose()?;
    Ok(TraceRecord {
        query_id: task.query_id.clone(),
        method: spec.label.clone(),
        calls: trace.calls_made,
        iterations: trace.iterations,
        ndcg,
        wig,
    })
}

/// Generates the benchmark and runs every method over every query.
/// Queries run in parallel; records come back in (query, method) order
/// regardless of scheduling.
pub fn run_suite(config: &SuiteConfig) -> Result<SuiteOutcome> {
    if config.methods.is_empty() {
        return Err(Error::Config("no methods to simulate".into()));
    }
    let mut labels = std::collections::HashSet::new();
    for spec in &config.methods {
        if !labels.insert(spec.label.as_str()) {
            return Err(Error::Config(format!(
                "duplicate method label {:?}; summaries key on the label",
                spec.label
            )));
        }
    }
    if config.k < 1 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let data = generate_synthetic(&config.data)?;
    let tasks = assemble_tasks(&data.run, &data.corpus, Some(&data.qrels), None)?;

    let per_query: Vec<Result<Vec<TraceRecord>>> = par::map_collect(&tasks, |task| {
        let temperature = data.temperatures[&task.query_id];
        let backend: Box<dyn Reranker> = match config.backend {
            SimBackend::Oracle => Box::new(OracleReranker),
            SimBackend::Noisy { seed } => Box::new(NoisyReranker::new(temperature, seed)?),
        };
        config
            .methods
            .iter()
            .map(|spec| {
                record_for(
                    task,
                    spec,
                    backend.as_ref(),
                    &data.qrels,
                    config.k,
                    config.wig_window,
                )
            })
            .collect()
    });
    let mut records = Vec::with_capacity(tasks.len() * config.methods.len());
    for rows in per_query {
        records.extend(rows?);
    }

    let summary = summarize(&config.methods, &records, &data)?;
    Ok(SuiteOutcome {
        data,
        records,
        summary,
    })
}

fn summarize(
    methods: &[MethodSpec],
    records: &[TraceRecord],
    data: &SyntheticData,
) -> Result<Vec<SummaryRow>> {
    let mut summary = Vec::with_capacity(methods.len());
    for spec in methods {
        let rows: Vec<&TraceRecord> = records.iter().filter(|r| r.method == spec.label).collect();
        if rows.is_empty() {
            return Err(Error::Eval(format!(
                "no records for method {:?}",
                spec.label
            )));
        }
        let n = rows.len() as f64;
        let mean_ndcg = rows.iter().map(|r| r.ndcg).sum::<f64>() / n;
        let mean_calls = rows.iter().map(|r| r.calls as f64).sum::<f64>() / n;
        let temps: Vec<f64> = rows
            .iter()
            .map(|r| data.temperatures[&r.query_id])
            .collect();
        let calls: Vec<f64> = rows.iter().map(|r| r.calls as f64).collect();
        let correlation = eval::spearman(&temps, &calls).ok();
        summary.push(SummaryRow {
            method: spec.label.clone(),
            budget: spec.budget,
            mean_ndcg,
            mean_calls,
            temp_calls_rho: correlation.map(|c| c.rho),
            temp_calls_p: correlation.map(|c| c.p_value),
        });
    }
    Ok(summary)
}

/// Renders summary rows as CSV with a header.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,budget,mean_ndcg,mean_calls,temp_calls_rho,temp_calls_p\n");
    for row in rows {
        let budget = row.budget.map(|b| b.to_string()).unwrap_or_default();
        let rho = row
            .temp_calls_rho
            .map(|v| format!("{v:.4}"))
            .unwrap_or_default();
        let p = row
            .temp_calls_p
            .map(|v| format!("{v:.6}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{budget},{:.6},{:.4},{rho},{p}\n",
            row.method, row.mean_ndcg, row.mean_calls
        ));
    }
    out
}
