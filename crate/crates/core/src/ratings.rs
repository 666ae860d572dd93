//! Gaussian relevance beliefs and the multiplayer TrueSkill update.
//!
//! A reranker call over a batch of documents is scored as a free-for-all
//! game: every document is a single-player team, the reranked order supplies
//! a strict ranking, and one full factor-graph message-passing sweep updates
//! all beliefs jointly. The two-player case collapses to the closed-form
//! v/w update, which the test suite checks against an independent
//! implementation.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::normal;

pub use crate::normal::{v_exceeds, w_exceeds};

/// Variance floor for posterior beliefs. Repeated confident updates can
/// otherwise underflow sigma to zero and break the Rating invariant.
const MIN_VARIANCE: f64 = 1e-12;

/// Message-passing convergence threshold on the truncation layer.
const MIN_DELTA: f64 = 1e-4;

/// Maximum truncation-layer sweeps per game.
const MAX_SWEEPS: usize = 10;

/// A Gaussian belief over one document's latent relevance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rating {
    /// Estimated relevance (unitless, on the retrieval-score scale).
    pub mu: f64,
    /// Epistemic standard deviation on the same scale.
    pub sigma: f64,
}

impl Rating {
    /// Creates a rating, rejecting non-finite values and sigma ≤ 0.
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma.is_finite() {
            return Err(Error::Config(format!(
                "rating must be finite, got mu={mu}, sigma={sigma}"
            )));
        }
        if sigma <= 0.0 {
            return Err(Error::Config(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        Ok(Rating { mu, sigma })
    }
}

impl Default for Rating {
    /// The conventional TrueSkill prior (25, 25/3).
    fn default() -> Self {
        Rating {
            mu: 25.0,
            sigma: 25.0 / 3.0,
        }
    }
}

/// Global game parameters shared by every rating update.
#[derive(Clone, Copy, Debug)]
pub struct Environment {
    /// Observation noise: performance variance around latent relevance.
    pub beta: f64,
    /// Additive skill drift per game. Relevance is static, so default 0.
    pub dynamics: f64,
    /// Prior probability of a draw between adjacent pairs. Reranker
    /// outputs are strict orderings, so outcomes never contain draws, but
    /// the margin derived from this still shapes the update.
    pub draw_probability: f64,
}

impl Environment {
    pub fn new(beta: f64, dynamics: f64, draw_probability: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        if !(dynamics >= 0.0 && dynamics.is_finite()) {
            return Err(Error::Config(format!(
                "dynamics must be non-negative, got {dynamics}"
            )));
        }
        if !(0.0..1.0).contains(&draw_probability) {
            return Err(Error::Config(format!(
                "draw probability must be in [0, 1), got {draw_probability}"
            )));
        }
        Ok(Environment {
            beta,
            dynamics,
            draw_probability,
        })
    }

    /// Environment with a different beta and the default remaining knobs.
    pub fn with_beta(beta: f64) -> Result<Self> {
        let d = Environment::default();
        Environment::new(beta, d.dynamics, d.draw_probability)
    }

    fn draw_margin(&self) -> f64 {
        // Adjacent pairs always involve exactly two players.
        normal::quantile((self.draw_probability + 1.0) / 2.0) * std::f64::consts::SQRT_2 * self.beta
    }
}

impl Default for Environment {
    fn default() -> Self {
        Environment {
            beta: 25.0 / 6.0,
            dynamics: 0.0,
            draw_probability: 0.1,
        }
    }
}

/// One observed game: participants with prior beliefs, plus a strict
/// ranking (0 = best). Construction validates all invariants, so a held
/// `GameOutcome` is always rateable.
#[derive(Clone, Debug)]
pub struct GameOutcome {
    participants: Vec<(String, Rating)>,
    ranks: Vec<usize>,
}

impl GameOutcome {
    /// Validates and builds an outcome. `ranks[i]` is the observed rank of
    /// `participants[i]`; ranks must be a permutation of 0..n-1 (no ties).
    pub fn new(participants: Vec<(String, Rating)>, ranks: Vec<usize>) -> Result<Self> {
        let n = participants.len();
        if n < 2 {
            return Err(Error::InvalidOutcome(format!(
                "a game needs at least 2 participants, got {n}"
            )));
        }
        if ranks.len() != n {
            return Err(Error::InvalidOutcome(format!(
                "{} ranks for {n} participants",
                ranks.len()
            )));
        }
        let mut ids = HashSet::with_capacity(n);
        for (id, _) in &participants {
            if !ids.insert(id.as_str()) {
                return Err(Error::InvalidOutcome(format!(
                    "duplicate participant id {id:?}"
                )));
            }
        }
        let mut seen = vec![false; n];
        for &r in &ranks {
            if r >= n || seen[r] {
                return Err(Error::InvalidOutcome(format!(
                    "ranks must be a permutation of 0..{n}, got {ranks:?}"
                )));
            }
            seen[r] = true;
        }
        Ok(GameOutcome {
            participants,
            ranks,
        })
    }

    pub fn participants(&self) -> &[(String, Rating)] {
        &self.participants
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }
}

/// Converts a reranked ordering over a batch into a `GameOutcome`: each
/// document's rank is its position in `ordering` (0 = most relevant).
///
/// `ordering` must be a permutation of the batch ids; repair of malformed
/// reranker output happens upstream, so a mismatch here is a contract
/// violation, not recoverable noise.
pub fn transform_outcome(batch: &[(String, Rating)], ordering: &[String]) -> Result<GameOutcome> {
    if ordering.len() != batch.len() {
        return Err(Error::InvalidOutcome(format!(
            "ordering has {} ids for a batch of {}",
            ordering.len(),
            batch.len()
        )));
    }
    let mut pos = std::collections::HashMap::with_capacity(ordering.len());
    for (p, id) in ordering.iter().enumerate() {
        if pos.insert(id.as_str(), p).is_some() {
            return Err(Error::InvalidOutcome(format!("ordering repeats id {id:?}")));
        }
    }
    let ranks = batch
        .iter()
        .map(|(id, _)| {
            pos.get(id.as_str()).copied().ok_or_else(|| {
                Error::InvalidOutcome(format!("ordering is missing batch id {id:?}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GameOutcome::new(batch.to_vec(), ranks)
}

/// Gaussian in precision form: pi = 1/sigma^2, tau = mu/sigma^2.
/// pi = tau = 0 is the improper uniform message.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Gaussian {
    pi: f64,
    tau: f64,
}

impl Gaussian {
    const ZERO: Gaussian = Gaussian { pi: 0.0, tau: 0.0 };

    fn from_mu_sigma(mu: f64, sigma: f64) -> Self {
        let pi = 1.0 / (sigma * sigma);
        Gaussian { pi, tau: mu * pi }
    }

    fn mu(&self) -> f64 {
        if self.pi == 0.0 {
            0.0
        } else {
            self.tau / self.pi
        }
    }

    fn mul(self, other: Gaussian) -> Gaussian {
        Gaussian {
            pi: self.pi + other.pi,
            tau: self.tau + other.tau,
        }
    }

    fn div(self, other: Gaussian) -> Gaussian {
        Gaussian {
            pi: self.pi - other.pi,
            tau: self.tau - other.tau,
        }
    }
}

/// Factor-graph state for one game over n sorted players: variable
/// marginals plus one message per factor-variable edge.
///
/// Variable layout: skill i, perf i, team-perf i, then n-1 pairwise
/// performance differences. Edge layout follows the factor list in
/// `rate_sorted`.
struct Graph {
    vals: Vec<Gaussian>,
    msgs: Vec<Gaussian>,
    n: usize,
}

impl Graph {
    fn new(n: usize) -> Self {
        Graph {
            vals: vec![Gaussian::ZERO; 3 * n + (n - 1)],
            msgs: vec![Gaussian::ZERO; 9 * n - 4],
            n,
        }
    }

    // Variable indices.
    fn skill(&self, i: usize) -> usize {
        i
    }
    fn perf(&self, i: usize) -> usize {
        self.n + i
    }
    fn team(&self, i: usize) -> usize {
        2 * self.n + i
    }
    fn diff(&self, x: usize) -> usize {
        3 * self.n + x
    }

    // Edge indices, grouped by owning factor.
    fn prior_edge(&self, i: usize) -> usize {
        i
    }
    fn lik_skill_edge(&self, i: usize) -> usize {
        self.n + 2 * i
    }
    fn lik_perf_edge(&self, i: usize) -> usize {
        self.n + 2 * i + 1
    }
    fn team_sum_edge(&self, i: usize) -> usize {
        3 * self.n + 2 * i
    }
    fn team_term_edge(&self, i: usize) -> usize {
        3 * self.n + 2 * i + 1
    }
    fn diff_sum_edge(&self, x: usize) -> usize {
        5 * self.n + 3 * x
    }
    fn diff_left_edge(&self, x: usize) -> usize {
        5 * self.n + 3 * x + 1
    }
    fn diff_right_edge(&self, x: usize) -> usize {
        5 * self.n + 3 * x + 2
    }
    fn trunc_edge(&self, x: usize) -> usize {
        8 * self.n - 3 + x
    }

    /// Convergence measure between successive marginals. An infinite
    /// precision jump counts as converged, mirroring the reference
    /// treatment of improper messages.
    fn delta(a: Gaussian, b: Gaussian) -> f64 {
        let pi_delta = (a.pi - b.pi).abs();
        if pi_delta.is_infinite() {
            return 0.0;
        }
        (a.tau - b.tau).abs().max(pi_delta.sqrt())
    }

    /// Replaces the factor's stored message; the marginal absorbs the
    /// ratio new/old. Returns how far the marginal moved.
    fn update_message(&mut self, var: usize, edge: usize, msg: Gaussian) -> f64 {
        let old = self.msgs[edge];
        self.msgs[edge] = msg;
        let val = self.vals[var].div(old).mul(msg);
        let d = Self::delta(self.vals[var], val);
        self.vals[var] = val;
        d
    }

    /// Forces the marginal to `value` and back-solves the message that
    /// keeps marginal = product of incoming messages consistent.
    fn update_value(&mut self, var: usize, edge: usize, value: Gaussian) -> f64 {
        let old = self.msgs[edge];
        self.msgs[edge] = value.mul(old).div(self.vals[var]);
        let d = Self::delta(self.vals[var], value);
        self.vals[var] = value;
        d
    }

    fn prior_down(&mut self, i: usize, rating: Rating, dynamics: f64) -> f64 {
        let sigma = (rating.sigma * rating.sigma + dynamics * dynamics).sqrt();
        let (var, edge) = (self.skill(i), self.prior_edge(i));
        self.update_value(var, edge, Gaussian::from_mu_sigma(rating.mu, sigma))
    }

    fn likelihood_down(&mut self, i: usize, beta2: f64) -> f64 {
        let div = self.vals[self.skill(i)].div(self.msgs[self.lik_skill_edge(i)]);
        let a = 1.0 / (1.0 + beta2 * div.pi);
        let (var, edge) = (self.perf(i), self.lik_perf_edge(i));
        self.update_message(
            var,
            edge,
            Gaussian {
                pi: a * div.pi,
                tau: a * div.tau,
            },
        )
    }

    fn likelihood_up(&mut self, i: usize, beta2: f64) -> f64 {
        let div = self.vals[self.perf(i)].div(self.msgs[self.lik_perf_edge(i)]);
        let a = 1.0 / (1.0 + beta2 * div.pi);
        let (var, edge) = (self.skill(i), self.lik_skill_edge(i));
        self.update_message(
            var,
            edge,
            Gaussian {
                pi: a * div.pi,
                tau: a * div.tau,
            },
        )
    }

    /// Weighted-sum factor message toward `target`: the exact Gaussian
    /// marginalization of sum = Σ coeff_j · source_j given the messages
    /// currently flowing in from the sources.
    fn sum_update(
        &mut self,
        target_var: usize,
        target_edge: usize,
        sources: &[(usize, usize, f64)],
    ) -> f64 {
        let mut pi_inv = 0.0f64;
        let mut mu = 0.0f64;
        for &(var, edge, coeff) in sources {
            let div = self.vals[var].div(self.msgs[edge]);
            mu += coeff * div.mu();
            if pi_inv.is_infinite() {
                continue;
            }
            if div.pi == 0.0 {
                pi_inv = f64::INFINITY;
            } else {
                pi_inv += coeff * coeff / div.pi;
            }
        }
        let pi = 1.0 / pi_inv;
        let tau = pi * mu;
        self.update_message(target_var, target_edge, Gaussian { pi, tau })
    }

    fn team_down(&mut self, i: usize) -> f64 {
        let sources = [(self.perf(i), self.team_term_edge(i), 1.0)];
        let (var, edge) = (self.team(i), self.team_sum_edge(i));
        self.sum_update(var, edge, &sources)
    }

    fn team_up(&mut self, i: usize) -> f64 {
        let sources = [(self.team(i), self.team_sum_edge(i), 1.0)];
        let (var, edge) = (self.perf(i), self.team_term_edge(i));
        self.sum_update(var, edge, &sources)
    }

    /// diff_x = team_x - team_{x+1}.
    fn diff_down(&mut self, x: usize) -> f64 {
        let sources = [
            (self.team(x), self.diff_left_edge(x), 1.0),
            (self.team(x + 1), self.diff_right_edge(x), -1.0),
        ];
        let (var, edge) = (self.diff(x), self.diff_sum_edge(x));
        self.sum_update(var, edge, &sources)
    }

    /// Message up to the left team: team_x = diff_x + team_{x+1}.
    fn diff_up_left(&mut self, x: usize) -> f64 {
        let sources = [
            (self.diff(x), self.diff_sum_edge(x), 1.0),
            (self.team(x + 1), self.diff_right_edge(x), 1.0),
        ];
        let (var, edge) = (self.team(x), self.diff_left_edge(x));
        self.sum_update(var, edge, &sources)
    }

    /// Message up to the right team: team_{x+1} = team_x - diff_x.
    fn diff_up_right(&mut self, x: usize) -> f64 {
        let sources = [
            (self.diff(x), self.diff_sum_edge(x), -1.0),
            (self.team(x), self.diff_left_edge(x), 1.0),
        ];
        let (var, edge) = (self.team(x + 1), self.diff_right_edge(x));
        self.sum_update(var, edge, &sources)
    }

    /// Truncates the difference marginal to the winning region
    /// (diff > draw margin) via the v/w moment-matching corrections.
    fn trunc_up(&mut self, x: usize, draw_margin: f64) -> f64 {
        let div = self.vals[self.diff(x)].div(self.msgs[self.trunc_edge(x)]);
        let sqrt_pi = div.pi.sqrt();
        let t = div.tau / sqrt_pi - draw_margin * sqrt_pi;
        let v = normal::v_exceeds(t);
        let w = normal::w_exceeds(t);
        let denom = 1.0 - w;
        let value = Gaussian {
            pi: div.pi / denom,
            tau: (div.tau + sqrt_pi * v) / denom,
        };
        let (var, edge) = (self.diff(x), self.trunc_edge(x));
        self.update_value(var, edge, value)
    }
}

/// Runs the full message-passing schedule over players already sorted by
/// rank (index 0 = winner) and returns their posteriors in that order.
fn rate_sorted(ratings: &[Rating], env: &Environment) -> Vec<Rating> {
    let n = ratings.len();
    let d = n - 1;
    let beta2 = env.beta * env.beta;
    let draw_margin = env.draw_margin();
    let mut g = Graph::new(n);

    for (i, r) in ratings.iter().enumerate() {
        g.prior_down(i, *r, env.dynamics);
    }
    for i in 0..n {
        g.likelihood_down(i, beta2);
    }
    for i in 0..n {
        g.team_down(i);
    }

    // Iterate the chain of difference factors until the truncation layer
    // stops moving. A single difference needs no lateral sweeps.
    for _ in 0..MAX_SWEEPS {
        let mut delta = 0.0f64;
        if d == 1 {
            g.diff_down(0);
            delta = g.trunc_up(0, draw_margin);
        } else {
            for x in 0..d - 1 {
                g.diff_down(x);
                delta = delta.max(g.trunc_up(x, draw_margin));
                g.diff_up_right(x);
            }
            for x in (1..d).rev() {
                g.diff_down(x);
                delta = delta.max(g.trunc_up(x, draw_margin));
                g.diff_up_left(x);
            }
        }
        if delta <= MIN_DELTA {
            break;
        }
    }

    g.diff_up_left(0);
    g.diff_up_right(d - 1);
    for i in 0..n {
        g.team_up(i);
    }
    for i in 0..n {
        g.likelihood_up(i, beta2);
    }

    (0..n)
        .map(|i| {
            let post = g.vals[g.skill(i)];
            let var = (1.0 / post.pi).max(MIN_VARIANCE);
            Rating {
                mu: post.mu(),
                sigma: var.sqrt(),
            }
        })
        .collect()
}

/// Applies one multiplayer TrueSkill update and returns the posterior
/// ratings in the outcome's participant order.
pub fn rate(outcome: &GameOutcome, env: &Environment) -> Vec<Rating> {
    let n = outcome.participants.len();
    // order[pos] = participant index holding rank pos.
    let mut order = vec![0usize; n];
    for (i, &r) in outcome.ranks.iter().enumerate() {
        order[r] = i;
    }
    let sorted: Vec<Rating> = order.iter().map(|&i| outcome.participants[i].1).collect();
    let posted = rate_sorted(&sorted, env);
    let mut out = vec![Rating::default(); n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = posted[pos];
    }
    out
}
