//! Adaptive listwise reranking with uncertainty-aware computation allocation.
//!
//! The crate models each candidate document's relevance as a Gaussian
//! TrueSkill belief, treats every listwise reranker call as a multiplayer
//! game among the batched documents, and keeps spending reranker calls only
//! where the ranking near the top-k cutoff is still uncertain. Fixed-budget
//! baselines (sliding windows, TourRank, static TrueSkill schedules) share
//! the same backend interface and call accounting so strategies can be
//! compared call-for-call.
//!
//! Module map:
//!
//! - [`normal`] — standard-normal numerics and the exceedance corrections
//!   used by the rating update.
//! - [`ratings`] — Gaussian relevance beliefs and the multiplayer TrueSkill
//!   update over reranker outcomes.
//! - [`belief`] — top-k threshold solving, per-document top-k probabilities,
//!   and rank-probability oracles (Monte Carlo, exact quadrature).
//! - [`backend`] — the listwise reranker interface with oracle, noisy
//!   (Plackett–Luce) and HTTP implementations.
//! - [`engine`] — the adaptive reranking loop: select uncertain documents,
//!   partition, rerank, update, stop.
//! - [`baselines`] — sliding windows, TourRank, and static TrueSkill stage
//!   plans under the same call accounting.
//! - [`eval`] — NDCG@k, macro averaging, WIG query difficulty, Spearman
//!   correlation, and bootstrap helpers.
//! - [`io`] — TREC run/qrels parsing, JSONL corpora, synthetic dataset
//!   generation, and trace persistence.
//! - [`simulate`] — seeded end-to-end comparison suites over synthetic data.
//!
//! With the default `parallel` feature the Monte-Carlo oracle, suite
//! evaluation and intra-iteration backend calls fan out over rayon; without
//! it every code path runs sequentially. Both paths produce bit-identical
//! results for a fixed seed.

pub mod backend;
pub mod baselines;
pub mod belief;
pub mod engine;
pub mod error;
pub mod eval;
pub(crate) mod hash;
pub mod io;
pub mod normal;
pub(crate) mod par;
pub mod ratings;
pub mod simulate;

pub use error::{Error, Result};
pub use ratings::{Environment, GameOutcome, Rating};

/// Configure the global worker pool size for the `parallel` feature.
///
/// Call once before any parallel work. Returns an error if the pool was
/// already initialized with a different size.
#[cfg(feature = "parallel")]
pub fn set_worker_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Sequential builds have no pool to configure; any `--jobs` value is a no-op.
#[cfg(not(feature = "parallel"))]
pub fn set_worker_threads(_n: usize) -> Result<()> {
    Ok(())
}
