//! Shared test oracles. Everything here is deliberately written from the
//! defining equations, independent of the library's implementation paths,
//! so agreement tests actually compare two routes to the same quantity.

#![allow(dead_code)]

use statrs::function::erf;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

// libm's erfc is accurate to a few ulp; statrs's carries ~1e-10 relative
// error in the tails, which the var/c amplification in the update turns
// into mu gaps above 1e-9 on upset games.
fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

fn norm_quantile(p: f64) -> f64 {
    SQRT_2 * erf::erf_inv(2.0 * p - 1.0)
}

/// Closed-form two-player TrueSkill update for a decisive game.
///
/// Direct transcription of the pairwise update equations:
///   c^2 = 2 beta^2 + var_w + var_l
///   x   = (mu_w - mu_l - margin) / c,  margin = Phi^-1((1+p)/2) sqrt(2) beta
///   v   = pdf(x)/cdf(x),  w = v (v + x)
///   mu'_w  = mu_w + var_w / c * v      mu'_l  = mu_l - var_l / c * v
///   var'_i = var_i (1 - var_i / c^2 * w)
///
/// Returns ((mu, sigma) winner, (mu, sigma) loser). Dynamics variance is
/// folded into var before the update, as in the rating engine.
pub fn closed_form_two_player(
    winner: (f64, f64),
    loser: (f64, f64),
    beta: f64,
    draw_probability: f64,
    dynamics: f64,
) -> ((f64, f64), (f64, f64)) {
    let var_w = winner.1 * winner.1 + dynamics * dynamics;
    let var_l = loser.1 * loser.1 + dynamics * dynamics;
    let c2 = 2.0 * beta * beta + var_w + var_l;
    let c = c2.sqrt();
    let margin = if draw_probability > 0.0 {
        norm_quantile((draw_probability + 1.0) / 2.0) * SQRT_2 * beta
    } else {
        0.0
    };
    let x = (winner.0 - loser.0 - margin) / c;
    let v = norm_pdf(x) / norm_cdf(x);
    let w = v * (v + x);
    let mu_w = winner.0 + var_w / c * v;
    let mu_l = loser.0 - var_l / c * v;
    let sigma_w = (var_w * (1.0 - var_w / c2 * w)).sqrt();
    let sigma_l = (var_l * (1.0 - var_l / c2 * w)).sqrt();
    ((mu_w, sigma_w), (mu_l, sigma_l))
}

/// Reference NDCG@k, written straight from the definition: gain 2^g - 1,
/// discount log2(position + 1) with 1-based positions, ideal from all
/// judged grades sorted descending.
pub fn reference_ndcg(ranked_grades: &[u32], all_judged_grades: &[u32], k: usize) -> f64 {
    let dcg: f64 = ranked_grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i as f64 + 2.0).log2()))
        .sum();
    let mut ideal: Vec<u32> = all_judged_grades.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(g as i32) - 1.0) / ((i as f64 + 2.0).log2()))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Mean of a slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Percentile of the paired-difference bootstrap distribution.
///
/// Resamples query indices with replacement `resamples` times, records the
/// mean of (a[i] - b[i]) for each resample, and returns the requested
/// percentile of those means. Deterministic for a fixed seed.
pub fn paired_bootstrap_percentile(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    percentile: f64,
    seed: u64,
) -> f64 {
    use rand::{Rng, SeedableRng};
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..n {
                let i = rng.gen_range(0..n);
                acc += a[i] - b[i];
            }
            acc / n as f64
        })
        .collect();
    means.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    let idx = ((percentile / 100.0) * (resamples as f64 - 1.0)).round() as usize;
    means[idx.min(resamples - 1)]
}

/// Standard error of the mean of the bootstrap distribution of mean(xs).
pub fn bootstrap_se_of_mean(xs: &[f64], resamples: usize, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let n = xs.len();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += xs[rng.gen_range(0..n)];
            }
            acc / n as f64
        })
        .collect();
    let m = mean(&means);
    (means.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (resamples as f64 - 1.0)).sqrt()
}

#[cfg(test)]
mod sanity {
    use super::*;

    #[test]
    fn closed_form_matches_frozen_reference() {
        // Frozen from a 40-digit evaluation of the equations above.
        let ((mu_w, s_w), (mu_l, s_l)) =
            closed_form_two_player((25.0, 25.0 / 3.0), (25.0, 25.0 / 3.0), 25.0 / 6.0, 0.1, 0.0);
        assert!((mu_w - 29.39557565081789588).abs() < 1e-12);
        assert!((s_w - 7.1711414644532586567).abs() < 1e-12);
        assert!((mu_l - 20.60442434918210412).abs() < 1e-12);
        assert!((s_l - 7.1711414644532586567).abs() < 1e-12);

        let ((mu_w, s_w), (mu_l, s_l)) =
            closed_form_two_player((28.1, 7.9), (31.4, 2.3), 4.1, 0.1, 0.0);
        assert!((mu_w - 34.727530759703515757).abs() < 1e-12);
        assert!((s_w - 5.9103374601650406276).abs() < 1e-12);
        assert!((mu_l - 30.838236857573600411).abs() < 1e-12);
        assert!((s_l - 2.256674993186248543).abs() < 1e-12);
    }

    #[test]
    fn reference_ndcg_hand_example() {
        // Retrieved grades [1, 2, 0] against judged pool {2, 1, 0}:
        // DCG  = 1/log2(2) + 3/log2(3) = 2.8928
        // IDCG = 3/log2(2) + 1/log2(3) = 3.6309
        let ndcg = reference_ndcg(&[1, 2, 0], &[2, 1, 0], 3);
        assert!((ndcg - 0.7967).abs() < 5e-5, "got {ndcg}");
    }
}
