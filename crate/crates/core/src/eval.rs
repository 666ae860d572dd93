//! Ranking quality metrics: graded NDCG against TREC-style judgments,
//! macro averaging across datasets, a weighted information gain summary
//! of score profiles, and Spearman rank correlation with a t-based
//! significance test.

use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Default score-profile window for `wig`.
pub const WIG_WINDOW: usize = 50;

/// Relevance judgments: query id to document id to graded relevance.
#[derive(Clone, Debug, Default)]
pub struct Qrels {
    by_query: HashMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    /// Records one judgment, replacing any earlier grade for the pair.
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.by_query
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.by_query.get(query_id)?.get(doc_id).copied()
    }

    pub fn judged(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.by_query.get(query_id)
    }

    /// Query ids in sorted order, so iteration is reproducible.
    pub fn query_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.by_query.keys().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }

    pub fn len(&self) -> usize {
        self.by_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_query.is_empty()
    }
}

/// NDCG@k with exponential gain 2^grade - 1 and log2(position + 1)
/// discount. Documents without a judgment count as grade 0; the ideal
/// ranking draws on every judged document for the query. A query whose
/// judgments contain no relevant document scores 0.
pub fn ndcg_at_k(qrels: &Qrels, query_id: &str, ranking: &[String], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::Eval("ndcg needs k >= 1".into()));
    }
    let judged = qrels
        .judged(query_id)
        .ok_or_else(|| Error::Eval(format!("query {query_id:?} has no judgments")))?;
    let mut seen = std::collections::HashSet::with_capacity(ranking.len());
    for doc in ranking {
        if !seen.insert(doc.as_str()) {
            return Err(Error::Eval(format!(
                "ranking for {query_id:?} repeats document {doc:?}"
            )));
        }
    }

    let gain = |g: u32| 2f64.powi(g as i32) - 1.0;
    let discount = |pos: usize| ((pos + 2) as f64).log2();

    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i))
        .sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }

    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, doc)| gain(judged.get(doc.as_str()).copied().unwrap_or(0)) / discount(i))
        .sum();
    Ok(dcg / idcg)
}

/// Unweighted mean of per-dataset means, so small datasets weigh the same
/// as large ones.
pub fn macro_average(datasets: &[Vec<f64>]) -> Result<f64> {
    if datasets.is_empty() {
        return Err(Error::Eval("macro average over zero datasets".into()));
    }
    let mut total = 0.0;
    for (i, scores) in datasets.iter().enumerate() {
        if scores.is_empty() {
            return Err(Error::Eval(format!("dataset {i} has no scores")));
        }
        total += scores.iter().sum::<f64>() / scores.len() as f64;
    }
    Ok(total / datasets.len() as f64)
}

/// Report formatting: one decimal place, applied only at the edge so
/// intermediate math keeps full precision.
pub fn format_score(score: f64) -> String {
    format!("{score:.1}")
}

/// Weighted information gain of a ranked score profile: mean log(1 + s)
/// over the top `window` entries minus the same mean over all entries.
/// Positive values mean the head of the ranking concentrates the mass.
pub fn wig(scores: &[f64], window: usize) -> Result<f64> {
    if window < 1 {
        return Err(Error::Eval("wig needs a window of at least 1".into()));
    }
    if scores.len() < window {
        return Err(Error::Eval(format!(
            "wig needs at least {window} scores, got {}",
            scores.len()
        )));
    }
    for &s in scores {
        if !s.is_finite() || s <= -1.0 {
            return Err(Error::Eval(format!(
                "wig scores must be finite and greater than -1, got {s}"
            )));
        }
    }
    // Anchoring the logs at the first entry cancels the common level before
    // any rounding, so a flat profile comes out exactly zero instead of a
    // few ulps away from it.
    let anchor = scores[0].ln_1p();
    let mean_log =
        |xs: &[f64]| xs.iter().map(|&s| s.ln_1p() - anchor).sum::<f64>() / xs.len() as f64;
    Ok(mean_log(&scores[..window]) - mean_log(scores))
}

/// Spearman rank correlation and its two-sided p-value.
#[derive(Clone, Copy, Debug)]
pub struct Correlation {
    pub rho: f64,
    pub p_value: f64,
}

/// Ranks with ties sharing their average position (1-based).
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean 1-based rank.
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation via Pearson on average ranks; significance uses
/// the t approximation with n - 2 degrees of freedom.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Correlation> {
    let n = xs.len();
    if n != ys.len() {
        return Err(Error::Eval(format!(
            "length mismatch: {n} xs vs {} ys",
            ys.len()
        )));
    }
    if n < 4 {
        return Err(Error::Eval(format!(
            "spearman needs at least 4 pairs, got {n}"
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Eval("spearman inputs must be finite".into()));
    }

    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mean = (n + 1) as f64 / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = rx[i] - mean;
        let dy = ry[i] - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Eval(
            "spearman is undefined when one input is constant".into(),
        ));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);

    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df)
            .map_err(|e| Error::Eval(format!("t distribution: {e}")))?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Ok(Correlation { rho, p_value })
}
