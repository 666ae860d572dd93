//! Top-k probability machinery over a set of Gaussian relevance beliefs.
//!
//! Each document's latent score is x_i ~ N(mu_i, sigma_i^2 + beta^2). The
//! threshold t(r) is the point where the expected number of documents
//! exceeding it equals r; s_i = P(x_i > t(k)) approximates the probability
//! that document i belongs in the top k. Two oracles check that
//! approximation: a seeded Monte-Carlo estimate of P(rank_i <= r) and, for
//! tiny n, exact numerical integration of the rank distribution.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::normal;
use crate::par;
use crate::ratings::{Environment, Rating};

/// Expected-count tolerance at which bisection stops.
const COUNT_TOL: f64 = 1e-7;
/// Bracket-width fallback termination.
const WIDTH_TOL: f64 = 1e-9;
/// Samples per Monte-Carlo block. Blocks are seeded independently, so the
/// estimate is identical no matter how blocks are scheduled over workers.
const MC_BLOCK: usize = 4096;
/// Quadrature resolution for the exact small-n oracle.
const QUAD_NODES: usize = 2048;
/// The exact oracle is meant as a test-scale reference, not production.
const EXACT_MAX_N: usize = 8;

/// Gaussian beliefs over a fixed candidate list, plus the target cutoff k.
#[derive(Clone, Debug)]
pub struct BeliefState {
    doc_ids: Vec<String>,
    ratings: Vec<Rating>,
    env: Environment,
    k: usize,
}

impl BeliefState {
    /// Validates id uniqueness, length agreement, and 1 <= k <= n.
    pub fn new(
        doc_ids: Vec<String>,
        ratings: Vec<Rating>,
        env: Environment,
        k: usize,
    ) -> Result<Self> {
        let n = doc_ids.len();
        if n == 0 {
            return Err(Error::Config(
                "belief state needs at least one document".into(),
            ));
        }
        if ratings.len() != n {
            return Err(Error::Config(format!(
                "{} ratings for {n} documents",
                ratings.len()
            )));
        }
        if k < 1 || k > n {
            return Err(Error::Config(format!("k must be in 1..={n}, got {k}")));
        }
        let mut seen = std::collections::HashSet::with_capacity(n);
        for id in &doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("duplicate doc id {id:?}")));
            }
        }
        Ok(BeliefState {
            doc_ids,
            ratings,
            env,
            k,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Replaces one belief. The id set is immutable; only ratings move.
    pub fn set_rating(&mut self, idx: usize, rating: Rating) {
        self.ratings[idx] = rating;
    }

    /// Std-dev of the latent score x_i: observation noise included.
    pub fn sigma_eff(&self, i: usize) -> f64 {
        let s = self.ratings[i].sigma;
        (s * s + self.env.beta * self.env.beta).sqrt()
    }

    /// E[#documents with x_j > t].
    fn expected_count(&self, t: f64) -> f64 {
        (0..self.len())
            .map(|i| normal::sf((t - self.ratings[i].mu) / self.sigma_eff(i)))
            .sum()
    }
}

/// Per-document top-k membership probabilities and the threshold that
/// produced them. Sum of s equals k up to the solver tolerance.
#[derive(Clone, Debug)]
pub struct TopKProbabilities {
    pub s: Vec<f64>,
    pub threshold: f64,
}

/// Solves sum_i P(x_i > t) = r for t by bisection.
///
/// The objective is strictly decreasing in t, so the root is unique; the
/// bracket spans 12 effective sigmas beyond the extreme means, where the
/// objective is within working precision of n and 0.
pub fn solve_threshold(state: &BeliefState, r: usize) -> Result<f64> {
    let n = state.len();
    if r < 1 || r > n {
        return Err(Error::Config(format!("r must be in 1..={n}, got {r}")));
    }
    let target = r as f64;
    let mut mu_min = f64::INFINITY;
    let mut mu_max = f64::NEG_INFINITY;
    let mut sig_max = 0.0f64;
    for i in 0..n {
        mu_min = mu_min.min(state.ratings[i].mu);
        mu_max = mu_max.max(state.ratings[i].mu);
        sig_max = sig_max.max(state.sigma_eff(i));
    }
    let mut lo = mu_min - 12.0 * sig_max;
    let mut hi = mu_max + 12.0 * sig_max;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let count = state.expected_count(mid);
        if (count - target).abs() <= COUNT_TOL {
            return Ok(mid);
        }
        if count > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= WIDTH_TOL {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// s_i = P(x_i > t(k)) for every document.
pub fn topk_probabilities(state: &BeliefState) -> Result<TopKProbabilities> {
    let threshold = solve_threshold(state, state.k)?;
    let s = (0..state.len())
        .map(|i| normal::sf((threshold - state.ratings[i].mu) / state.sigma_eff(i)))
        .collect();
    Ok(TopKProbabilities { s, threshold })
}

/// Indices still uncertain about top-k membership: epsilon < s_i < 1-epsilon,
/// both inequalities strict (boundary documents count as confident).
pub fn select_uncertain(probs: &TopKProbabilities, epsilon: f64) -> Result<Vec<usize>> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::Config(format!(
            "epsilon must be in (0, 0.5), got {epsilon}"
        )));
    }
    Ok(probs
        .s
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > epsilon && s < 1.0 - epsilon)
        .map(|(i, _)| i)
        .collect())
}

fn mc_validate(state: &BeliefState, r: usize, samples: usize) -> Result<()> {
    let n = state.len();
    if r < 1 || r > n {
        return Err(Error::Config(format!("r must be in 1..={n}, got {r}")));
    }
    if samples < 1000 {
        return Err(Error::Config(format!(
            "need at least 1000 samples for a usable estimate, got {samples}"
        )));
    }
    Ok(())
}

/// One block's tally: how many of `len` joint samples put each document at
/// rank <= r. Rank is one plus the number of strictly larger draws.
fn mc_block(state: &BeliefState, r: usize, len: usize, seed: u64) -> Vec<u64> {
    let n = state.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mus: Vec<f64> = state.ratings.iter().map(|rt| rt.mu).collect();
    let sigs: Vec<f64> = (0..n).map(|i| state.sigma_eff(i)).collect();
    let mut counts = vec![0u64; n];
    let mut x = vec![0.0f64; n];
    for _ in 0..len {
        for i in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[i] = mus[i] + sigs[i] * z;
        }
        for i in 0..n {
            let exceeders = (0..n).filter(|&j| x[j] > x[i]).count();
            if exceeders < r {
                counts[i] += 1;
            }
        }
    }
    counts
}

fn mc_combine(blocks: Vec<Vec<u64>>, n: usize, samples: usize) -> Vec<f64> {
    let mut total = vec![0u64; n];
    for block in blocks {
        for (t, b) in total.iter_mut().zip(block) {
            *t += b;
        }
    }
    total.iter().map(|&c| c as f64 / samples as f64).collect()
}

fn mc_block_lens(samples: usize) -> Vec<usize> {
    let full = samples / MC_BLOCK;
    let rem = samples % MC_BLOCK;
    let mut lens = vec![MC_BLOCK; full];
    if rem > 0 {
        lens.push(rem);
    }
    lens
}

/// Monte-Carlo estimate of P(rank_i <= r) per document.
///
/// Fixed-size blocks carry seeds derived from (seed, block index), and the
/// per-block tallies are reduced in block order, so the result is
/// bit-identical whatever the worker count — including the sequential
/// build. Standard error is at most sqrt(0.25/samples).
pub fn mc_rank_oracle(
    state: &BeliefState,
    r: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    mc_validate(state, r, samples)?;
    let lens = mc_block_lens(samples);
    let blocks = par::map_range(0..lens.len(), |b| {
        mc_block(state, r, lens[b], crate::hash::substream(seed, b as u64))
    });
    Ok(mc_combine(blocks, state.len(), samples))
}

/// Always-sequential twin of [`mc_rank_oracle`]; same result bit for bit.
pub fn mc_rank_oracle_seq(
    state: &BeliefState,
    r: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    mc_validate(state, r, samples)?;
    let lens = mc_block_lens(samples);
    let blocks: Vec<Vec<u64>> = (0..lens.len())
        .map(|b| mc_block(state, r, lens[b], crate::hash::substream(seed, b as u64)))
        .collect();
    Ok(mc_combine(blocks, state.len(), samples))
}

/// Exact P(rank_i <= r) for small n by outer quadrature over document i's
/// score and an inner Poisson-binomial recursion over the exceedance
/// events of the other documents.
///
/// Intended as a reference oracle: cost grows as n^2 per quadrature node
/// and the integrand spans ±10 effective sigmas, so n is capped at 8.
pub fn exact_rank_probabilities(state: &BeliefState, r: usize) -> Result<Vec<f64>> {
    let n = state.len();
    if n > EXACT_MAX_N {
        return Err(Error::Config(format!(
            "exact oracle supports n <= {EXACT_MAX_N}, got {n}"
        )));
    }
    if r < 1 || r > n {
        return Err(Error::Config(format!("r must be in 1..={n}, got {r}")));
    }
    let (nodes, weights) = quad_table();
    let mus: Vec<f64> = state.ratings.iter().map(|rt| rt.mu).collect();
    let sigs: Vec<f64> = (0..n).map(|i| state.sigma_eff(i)).collect();
    let mut out = Vec::with_capacity(n);
    let mut dp = vec![0.0f64; n];
    for i in 0..n {
        let half = 10.0 * sigs[i];
        let center = mus[i];
        let mut acc = 0.0;
        for (&node, &weight) in nodes.iter().zip(weights) {
            let x = center + half * node;
            // P(exactly c of the others exceed x), built one document at
            // a time.
            dp[..n].fill(0.0);
            dp[0] = 1.0;
            let mut used = 0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let p = normal::sf((x - mus[j]) / sigs[j]);
                for c in (0..=used).rev() {
                    dp[c + 1] += dp[c] * p;
                    dp[c] *= 1.0 - p;
                }
                used += 1;
            }
            let top_r: f64 = dp[..r.min(n)].iter().sum();
            let density = normal::pdf((x - mus[i]) / sigs[i]) / sigs[i];
            acc += weight * half * density * top_r;
        }
        out.push(acc.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Gauss–Legendre nodes and weights on [-1, 1], computed once.
fn quad_table() -> (&'static [f64], &'static [f64]) {
    use std::sync::OnceLock;
    static TABLE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (nodes, weights) = TABLE.get_or_init(|| gauss_legendre(QUAD_NODES));
    (nodes, weights)
}

/// Legendre P_m(x) and its derivative via the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let mut p1 = 1.0f64;
    let mut p2 = 0.0f64;
    for j in 1..=m {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = ((2.0 * jf - 1.0) * x * p2 - (jf - 1.0) * p3) / jf;
    }
    let dp = m as f64 * (x * p1 - p2) / (x * x - 1.0);
    (p1, dp)
}

/// Nodes and weights of m-point Gauss–Legendre quadrature by Newton
/// iteration from the Chebyshev initial guess; symmetric pairs filled in
/// one pass.
fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0f64; m];
    let mut weights = vec![0.0f64; m];
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Initial guesses descend from +1, so index i is the i-th largest.
        nodes[m - 1 - i] = x;
        weights[m - 1 - i] = w;
        nodes[i] = -x;
        weights[i] = w;
    }
    (nodes, weights)
}
