//! The adaptive reranking loop: maintain Gaussian relevance beliefs, spend
//! rerank calls only on documents whose top-k membership is still
//! uncertain, and stop once the ranking question is settled or the budget
//! is gone.

use serde::{Deserialize, Serialize};

use crate::backend::{Passage, RerankRequest, Reranker};
use crate::belief::{select_uncertain, topk_probabilities, BeliefState, TopKProbabilities};
use crate::error::{Error, Result};
use crate::hash;
use crate::par;
use crate::ratings::{rate, transform_outcome, Environment, Rating};

/// Which convergence signal ends the loop. Budget and iteration caps apply
/// regardless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopRule {
    /// Stop once fewer than `tau` documents remain uncertain.
    UncertainCount,
    /// Stop once the top k survives `stability_window` consecutive
    /// iteration boundaries unchanged.
    TopKStability,
}

/// How the uncertain set splits into rerank batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionRule {
    /// Contiguous chunks of the uncertain set sorted by posterior mean,
    /// descending.
    ByMean,
    /// Seeded uniform shuffle, then contiguous chunks.
    Random,
}

/// Where initial beliefs come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InitRule {
    /// Every document starts at the environment default rating.
    Default,
    /// Means follow first-stage retrieval scores (shifted positive), with
    /// proportional uncertainty. Tasks carrying no scores fall back to
    /// the environment default rating, so the rule is safe everywhere.
    RetrievalScores,
}

/// Scheduler knobs. `Default` reproduces the standard configuration;
/// `variant` selects the named precision presets.
#[derive(Clone, Debug)]
pub struct SchedulerConfig {
    pub k: usize,
    /// Maximum documents per rerank call.
    pub m: usize,
    /// Certainty band: documents with epsilon < s < 1 - epsilon are
    /// uncertain.
    pub epsilon: f64,
    /// Uncertain-count stop threshold.
    pub tau: usize,
    pub max_calls: Option<usize>,
    pub max_iterations: usize,
    pub stop_rule: StopRule,
    pub stability_window: usize,
    pub partition_rule: PartitionRule,
    pub init_rule: InitRule,
    pub seed: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            k: 10,
            m: 20,
            epsilon: 0.01,
            tau: 10,
            max_calls: None,
            max_iterations: 100,
            stop_rule: StopRule::UncertainCount,
            stability_window: 2,
            partition_rule: PartitionRule::ByMean,
            init_rule: InitRule::RetrievalScores,
            seed: 0,
        }
    }
}

impl SchedulerConfig {
    /// Named presets: "default", "h" (tighter certainty band), and "hh"
    /// (tighter band and lower stop threshold).
    pub fn variant(name: &str) -> Result<Self> {
        let mut config = SchedulerConfig::default();
        match name {
            "default" => {}
            "h" => config.epsilon = 1e-4,
            "hh" => {
                config.epsilon = 1e-4;
                config.tau = 5;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown variant {other:?}; expected default, h, or hh"
                )))
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!(
                "epsilon must be in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        if self.tau < 1 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        if self.m < 2 {
            return Err(Error::Config(format!(
                "batch size m must be at least 2, got {}",
                self.m
            )));
        }
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.stability_window < 1 {
            return Err(Error::Config("stability_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// One query's candidates, in first-stage retrieval order (best first).
#[derive(Clone, Debug)]
pub struct QueryTask {
    pub query_id: String,
    pub query_text: String,
    pub passages: Vec<Passage>,
    /// Scores aligned with `passages`; required by
    /// `InitRule::RetrievalScores`.
    pub retrieval_scores: Option<Vec<f64>>,
}

impl QueryTask {
    pub fn new(
        query_id: impl Into<String>,
        query_text: impl Into<String>,
        passages: Vec<Passage>,
    ) -> Result<Self> {
        if passages.is_empty() {
            return Err(Error::Data(
                "a query task needs at least one passage".into(),
            ));
        }
        let mut seen = std::collections::HashSet::with_capacity(passages.len());
        for p in &passages {
            if p.doc_id.is_empty() {
                return Err(Error::Data("passage with empty doc id".into()));
            }
            if !seen.insert(p.doc_id.as_str()) {
                return Err(Error::Data(format!("duplicate doc id {:?}", p.doc_id)));
            }
        }
        Ok(QueryTask {
            query_id: query_id.into(),
            query_text: query_text.into(),
            passages,
            retrieval_scores: None,
        })
    }

    pub fn with_retrieval_scores(mut self, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != self.passages.len() {
            return Err(Error::Data(format!(
                "{} retrieval scores for {} passages",
                scores.len(),
                self.passages.len()
            )));
        }
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Data(format!("non-finite retrieval score {bad}")));
        }
        self.retrieval_scores = Some(scores);
        Ok(self)
    }
}

/// Why the loop ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// No document's top-k membership is in doubt.
    AllCertain,
    /// Fewer than `tau` documents remained uncertain.
    UncertainCount,
    /// The top k survived `stability_window` iteration boundaries.
    TopKStability,
    /// The call budget is exhausted.
    Budget,
    /// The iteration cap was reached.
    MaxIterations,
    /// Uncertain documents remain but none form a batch of two or more,
    /// so no call can change the posterior.
    Stalled,
}

/// One iteration's record: how many documents were uncertain, which batch
/// sizes were issued, and the top-k score threshold. The closing entry
/// issues no batches and carries the stop reason instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub selected_count: usize,
    pub batch_sizes: Vec<usize>,
    pub threshold: Option<f64>,
    pub stop_reason: Option<StopReason>,
}

/// Full account of one adaptive run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub calls_made: usize,
    /// Calls that consumed budget but produced no usable ordering.
    pub failed_calls: usize,
    /// Iterations that issued at least one rerank call.
    pub iterations: usize,
    pub per_iteration: Vec<IterationTrace>,
    /// Every candidate, most relevant first.
    pub final_ranking: Vec<String>,
}

/// Builds initial beliefs for a task. k is clamped to the candidate count
/// so short lists stay valid. Score-based initialization needs scores on
/// the task; without them it degrades to the uniform default prior.
pub fn initialize_beliefs(task: &QueryTask, config: &SchedulerConfig) -> Result<BeliefState> {
    let n = task.passages.len();
    let doc_ids: Vec<String> = task.passages.iter().map(|p| p.doc_id.clone()).collect();
    let k = config.k.min(n);
    let scores = match config.init_rule {
        InitRule::Default => None,
        InitRule::RetrievalScores => task.retrieval_scores.as_ref(),
    };
    match scores {
        None => {
            let ratings = vec![Rating::default(); n];
            BeliefState::new(doc_ids, ratings, Environment::default(), k)
        }
        Some(scores) => {
            if scores.len() != n {
                return Err(Error::Data(format!(
                    "{} retrieval scores for {n} passages",
                    scores.len()
                )));
            }
            if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
                return Err(Error::Data(format!("non-finite retrieval score {bad}")));
            }
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            // Shift keeps every mean positive so sigma = mu / 3 is valid.
            let shift = if min <= 0.0 { 0.1 - min } else { 0.0 };
            let ratings: Vec<Rating> = scores
                .iter()
                .map(|&s| {
                    let mu = s + shift;
                    Rating::new(mu, mu / 3.0)
                })
                .collect::<Result<Vec<_>>>()?;
            let mean_sigma = ratings.iter().map(|r| r.sigma).sum::<f64>() / ratings.len() as f64;
            let env = Environment::new(mean_sigma / 2.0, 0.0, 0.1)?;
            BeliefState::new(doc_ids, ratings, env, k)
        }
    }
}

/// All document indices sorted most relevant first: posterior mean
/// descending, then sigma ascending, then retrieval order.
pub fn rank_by_mean(state: &BeliefState) -> Vec<usize> {
    let ratings = state.ratings();
    let mut idx: Vec<usize> = (0..state.len()).collect();
    idx.sort_by(|&a, &b| {
        ratings[b]
            .mu
            .total_cmp(&ratings[a].mu)
            .then(ratings[a].sigma.total_cmp(&ratings[b].sigma))
            .then(a.cmp(&b))
    });
    idx
}

/// Splits the uncertain set into batches of at most `m` documents.
/// `seed` only matters under `PartitionRule::Random`.
pub fn partition(
    state: &BeliefState,
    uncertain: &[usize],
    m: usize,
    rule: PartitionRule,
    seed: u64,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = uncertain.to_vec();
    match rule {
        PartitionRule::ByMean => {
            let ratings = state.ratings();
            order.sort_by(|&a, &b| {
                ratings[b]
                    .mu
                    .total_cmp(&ratings[a].mu)
                    .then(ratings[a].sigma.total_cmp(&ratings[b].sigma))
                    .then(a.cmp(&b))
            });
        }
        PartitionRule::Random => {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            order.shuffle(&mut rng);
        }
    }
    order.chunks(m.max(1)).map(<[usize]>::to_vec).collect()
}

/// Picks which batches to run this iteration: the highest-posterior-mean
/// batches first, capped by the remaining call budget. Returns batch
/// indices in issue order (ascending), so updates stay canonical.
pub fn budget_schedule(
    state: &BeliefState,
    batches: &[Vec<usize>],
    remaining: Option<usize>,
) -> Vec<usize> {
    let ratings = state.ratings();
    let mean =
        |batch: &Vec<usize>| batch.iter().map(|&i| ratings[i].mu).sum::<f64>() / batch.len() as f64;
    let mut by_mean: Vec<usize> = (0..batches.len()).collect();
    by_mean.sort_by(|&a, &b| {
        mean(&batches[b])
            .total_cmp(&mean(&batches[a]))
            .then(a.cmp(&b))
    });
    let take = remaining.unwrap_or(batches.len()).min(batches.len());
    let mut chosen: Vec<usize> = by_mean.into_iter().take(take).collect();
    chosen.sort_unstable();
    chosen
}

/// Runs the adaptive loop for one query and returns its trace.
pub fn run_acurank(
    task: &QueryTask,
    config: &SchedulerConfig,
    backend: &dyn Reranker,
) -> Result<RunTrace> {
    config.validate()?;
    let state = initialize_beliefs(task, config)?;
    run_loop(task, config, backend, state)
}

fn run_loop(
    task: &QueryTask,
    config: &SchedulerConfig,
    backend: &dyn Reranker,
    mut state: BeliefState,
) -> Result<RunTrace> {
    let n = state.len();
    let k = state.k();
    let mut per_iteration: Vec<IterationTrace> = Vec::new();
    let mut calls = 0usize;
    let mut failed = 0usize;
    let mut prev_topk: Option<Vec<usize>> = None;
    let mut stable_streak = 0usize;

    loop {
        let iter = per_iteration.len() + 1;

        // Posterior snapshot. With k covering every candidate the top-k
        // question is vacuous and no threshold exists.
        let (threshold, probs) = if k == n {
            (
                None,
                TopKProbabilities {
                    s: vec![1.0; n],
                    threshold: f64::NEG_INFINITY,
                },
            )
        } else {
            let probs = topk_probabilities(&state)?;
            (Some(probs.threshold), probs)
        };
        let uncertain = select_uncertain(&probs, config.epsilon)?;

        let topk: Vec<usize> = rank_by_mean(&state).into_iter().take(k).collect();
        if let Some(prev) = &prev_topk {
            stable_streak = if *prev == topk { stable_streak + 1 } else { 0 };
        }
        prev_topk = Some(topk);

        // Stop checks, in precedence order. Rule-based stops only apply
        // from the second iteration, once the posterior reflects at least
        // one round of evidence.
        let mut stop = None;
        if uncertain.is_empty() {
            stop = Some(StopReason::AllCertain);
        } else if iter >= 2 {
            match config.stop_rule {
                StopRule::UncertainCount if uncertain.len() < config.tau => {
                    stop = Some(StopReason::UncertainCount);
                }
                StopRule::TopKStability if stable_streak >= config.stability_window => {
                    stop = Some(StopReason::TopKStability);
                }
                _ => {}
            }
        }
        if stop.is_none() {
            if let Some(max) = config.max_calls {
                if calls >= max {
                    stop = Some(StopReason::Budget);
                }
            }
        }
        if stop.is_none() && iter > config.max_iterations {
            stop = Some(StopReason::MaxIterations);
        }
        if let Some(reason) = stop {
            per_iteration.push(IterationTrace {
                selected_count: uncertain.len(),
                batch_sizes: Vec::new(),
                threshold,
                stop_reason: Some(reason),
            });
            break;
        }

        let shuffle_seed = hash::mix(&[
            &config.seed.to_le_bytes(),
            task.query_id.as_bytes(),
            &(iter as u64).to_le_bytes(),
        ]);
        let batches = partition(
            &state,
            &uncertain,
            config.m,
            config.partition_rule,
            shuffle_seed,
        );
        // A single uncertain document cannot be compared against anything.
        let runnable: Vec<Vec<usize>> = batches.into_iter().filter(|b| b.len() >= 2).collect();
        let remaining = config.max_calls.map(|max| max - calls);
        let chosen = budget_schedule(&state, &runnable, remaining);
        if chosen.is_empty() {
            per_iteration.push(IterationTrace {
                selected_count: uncertain.len(),
                batch_sizes: Vec::new(),
                threshold,
                stop_reason: Some(StopReason::Stalled),
            });
            break;
        }

        // Batches are disjoint, so call order cannot influence the
        // posterior; issuing in parallel and applying in batch order keeps
        // the trace canonical anyway.
        let results = par::map_collect(&chosen, |&b| {
            let passages: Vec<Passage> = runnable[b]
                .iter()
                .map(|&i| task.passages[i].clone())
                .collect();
            RerankRequest::new(task.query_text.clone(), passages)
                .and_then(|req| backend.rerank(&req))
        });

        let mut batch_sizes = Vec::with_capacity(chosen.len());
        for (&b, result) in chosen.iter().zip(results) {
            let batch = &runnable[b];
            batch_sizes.push(batch.len());
            calls += 1;
            match result {
                Ok(res) => {
                    let participants: Vec<(String, Rating)> = batch
                        .iter()
                        .map(|&i| (state.doc_ids()[i].clone(), state.ratings()[i]))
                        .collect();
                    let outcome = transform_outcome(&participants, &res.ordering)?;
                    let rated = rate(&outcome, state.env());
                    for (&i, rating) in batch.iter().zip(rated) {
                        state.set_rating(i, rating);
                    }
                }
                // A failed call spends budget but leaves beliefs alone.
                Err(Error::Transport(_)) | Err(Error::RerankerOutput { .. }) => {
                    failed += 1;
                }
                Err(other) => return Err(other),
            }
        }

        per_iteration.push(IterationTrace {
            selected_count: uncertain.len(),
            batch_sizes,
            threshold,
            stop_reason: None,
        });
    }

    let final_ranking: Vec<String> = rank_by_mean(&state)
        .into_iter()
        .map(|i| state.doc_ids()[i].clone())
        .collect();
    Ok(RunTrace {
        calls_made: calls,
        failed_calls: failed,
        iterations: per_iteration
            .iter()
            .filter(|e| !e.batch_sizes.is_empty())
            .count(),
        per_iteration,
        final_ranking,
    })
}
