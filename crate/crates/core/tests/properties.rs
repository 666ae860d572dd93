//! Randomized invariant checks. Each test states a property the library
//! must hold over its whole input domain, not just the worked examples in
//! the unit tests; proptest shrinks any counterexample it finds.

mod common;

use acurank_core::backend::{parse_ranking, repair_permutation, NoisyReranker, Passage};
use acurank_core::baselines::{
    run_sliding_window, run_tourrank, run_trueskill_static, SlidingWindowConfig, TourRankConfig,
    TrueSkillStaticConfig,
};
use acurank_core::belief::{topk_probabilities, BeliefState};
use acurank_core::engine::{run_acurank, QueryTask, SchedulerConfig};
use acurank_core::eval::{macro_average, ndcg_at_k, spearman, wig, Qrels};
use acurank_core::ratings::{rate, Environment, GameOutcome, Rating};
use proptest::prelude::*;

fn environment() -> impl Strategy<Value = Environment> {
    (0.5..10.0f64, 0.0..0.5f64).prop_map(|(beta, dp)| Environment::new(beta, 0.0, dp).unwrap())
}

/// Participants with ratings plus a strict rank permutation.
fn game(
    max_players: usize,
    sigma_exp: std::ops::Range<f64>,
) -> impl Strategy<Value = (Vec<Rating>, Vec<usize>)> {
    (2..=max_players).prop_flat_map(move |n| {
        (
            prop::collection::vec((0.0..50.0f64, sigma_exp.clone()), n),
            Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
        )
            .prop_map(|(params, ranks)| {
                let ratings = params
                    .into_iter()
                    .map(|(mu, e)| Rating::new(mu, 10f64.powf(e)).unwrap())
                    .collect();
                (ratings, ranks)
            })
    })
}

fn named(ratings: &[Rating]) -> Vec<(String, Rating)> {
    ratings
        .iter()
        .enumerate()
        .map(|(i, &r)| (format!("p{i}"), r))
        .collect()
}

/// Permutation of the 1-based identifiers 1..=n, the parser's codomain.
fn is_permutation(xs: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n + 1];
    xs.len() == n
        && xs
            .iter()
            .all(|&i| (1..=n).contains(&i) && !std::mem::replace(&mut seen[i], true))
}

fn graded_passages(prefix: &str, grades: &[u32]) -> Vec<Passage> {
    grades
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            Passage::new(format!("{prefix}{i}"), format!("{prefix} text {i}")).with_grade(g)
        })
        .collect()
}

fn sorted_ids(ids: &[String]) -> Vec<String> {
    let mut v = ids.to_vec();
    v.sort_unstable();
    v
}

proptest! {
    // Two routes to the pairwise posterior: message passing on the factor
    // graph against the closed-form update equations.
    #[test]
    fn two_player_update_matches_the_closed_form(
        (mu_a, sigma_a) in (0.0..50.0f64, 0.5..10.0f64),
        (mu_b, sigma_b) in (0.0..50.0f64, 0.5..10.0f64),
        env in environment(),
    ) {
        let a = Rating::new(mu_a, sigma_a).unwrap();
        let b = Rating::new(mu_b, sigma_b).unwrap();
        let outcome = GameOutcome::new(
            vec![("a".into(), a), ("b".into(), b)],
            vec![0, 1],
        ).unwrap();
        let posted = rate(&outcome, &env);
        let ((mu_w, s_w), (mu_l, s_l)) = common::closed_form_two_player(
            (a.mu, a.sigma),
            (b.mu, b.sigma),
            env.beta,
            env.draw_probability,
            env.dynamics,
        );
        for (got, want) in [
            (posted[0].mu, mu_w),
            (posted[0].sigma, s_w),
            (posted[1].mu, mu_l),
            (posted[1].sigma, s_l),
        ] {
            prop_assert!((got - want).abs() <= 1e-9, "gap {:e}", (got - want).abs());
        }
    }

    // With no dynamics noise an observation can only sharpen a belief, and
    // nothing in the update may overflow even when sigmas span six orders
    // of magnitude within one game.
    #[test]
    fn updates_shrink_sigma_and_stay_finite_across_scales(
        (ratings, ranks) in game(10, -3.0..3.0),
        env in environment(),
    ) {
        let outcome = GameOutcome::new(named(&ratings), ranks).unwrap();
        let posted = rate(&outcome, &env);
        for (pre, post) in ratings.iter().zip(&posted) {
            prop_assert!(post.mu.is_finite());
            prop_assert!(post.sigma.is_finite() && post.sigma > 0.0);
            prop_assert!(
                post.sigma <= pre.sigma,
                "sigma grew: {} -> {}",
                pre.sigma,
                post.sigma
            );
        }
    }

    // Identity of a participant is carried by its rating and rank alone:
    // listing the players in a different order permutes the posteriors
    // without changing a single bit.
    #[test]
    fn relabeling_participants_permutes_posteriors_bit_identically(
        (ratings, ranks) in game(8, -0.5..1.0),
        order in Just((0..8usize).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        // Dropping the out-of-range entries of a shuffled 0..8 leaves a
        // uniformly random permutation of 0..n.
        let n = ratings.len();
        let order: Vec<usize> = order.into_iter().filter(|&i| i < n).collect();
        let base = GameOutcome::new(named(&ratings), ranks.clone()).unwrap();
        let base_out = rate(&base, &Environment::default());

        let participants: Vec<(String, Rating)> = order
            .iter()
            .map(|&i| (format!("p{i}"), ratings[i]))
            .collect();
        let shuffled_ranks: Vec<usize> = order.iter().map(|&i| ranks[i]).collect();
        let shuffled = GameOutcome::new(participants, shuffled_ranks).unwrap();
        let shuffled_out = rate(&shuffled, &Environment::default());

        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(shuffled_out[j].mu.to_bits(), base_out[i].mu.to_bits());
            prop_assert_eq!(shuffled_out[j].sigma.to_bits(), base_out[i].sigma.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The threshold is defined by the conservation identity: membership
    // probabilities must add up to k no matter how the beliefs are spread.
    #[test]
    fn membership_probabilities_conserve_k(
        (params, k) in (5..=500usize).prop_flat_map(|n| {
            (prop::collection::vec((-50.0..50.0f64, 0.01..30.0f64), n), 1..n)
        }),
        beta in 0.5..8.0f64,
    ) {
        let n = params.len();
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let ratings: Vec<Rating> = params
            .iter()
            .map(|&(mu, sigma)| Rating::new(mu, sigma).unwrap())
            .collect();
        let env = Environment::with_beta(beta).unwrap();
        let state = BeliefState::new(ids, ratings, env, k).unwrap();
        let probs = topk_probabilities(&state).unwrap();
        let total: f64 = probs.s.iter().sum();
        prop_assert!((total - k as f64).abs() <= 1e-6, "sum {total} for k {k}");
        prop_assert!(probs.s.iter().all(|&s| (0.0..=1.0).contains(&s)));
    }

    // At a shared sigma the membership probability ranks documents exactly
    // as their means do; equality is tolerated only where both sides have
    // saturated past double precision.
    #[test]
    fn membership_is_monotone_in_the_mean_at_shared_sigma(
        (gaps, k) in (2..=40usize).prop_flat_map(|n| {
            (prop::collection::vec(0.05..3.0f64, n), 1..n)
        }),
        start in -20.0..20.0f64,
        sigma in 0.1..20.0f64,
        beta in 0.5..8.0f64,
    ) {
        let mut mu = start;
        let ratings: Vec<Rating> = gaps
            .iter()
            .map(|g| {
                mu += g;
                Rating::new(mu, sigma).unwrap()
            })
            .collect();
        let n = ratings.len();
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let env = Environment::with_beta(beta).unwrap();
        let state = BeliefState::new(ids, ratings, env, k).unwrap();
        let s = topk_probabilities(&state).unwrap().s;
        for w in s.windows(2) {
            prop_assert!(w[1] >= w[0], "s fell from {} to {}", w[0], w[1]);
            if w[0] > 1e-6 && w[1] < 1.0 - 1e-6 {
                prop_assert!(w[1] > w[0], "interior tie at {}", w[0]);
            }
        }
    }
}

proptest! {
    // Whatever bytes a model emits, the parser either recovers a valid
    // permutation of the request indices or fails with a structured error.
    #[test]
    fn parser_is_total_over_arbitrary_bytes(
        bytes in prop::collection::vec(any::<u8>(), 0..400),
        n in 1..=64usize,
    ) {
        let raw = String::from_utf8_lossy(&bytes);
        if let Ok((perm, _)) = parse_ranking(&raw, n) {
            prop_assert!(is_permutation(&perm, n));
        }
    }

    // Bracketed fragments are where the recovery paths live, so a biased
    // alphabet drives the parser down them far more often than raw bytes.
    #[test]
    fn parser_recoveries_emit_permutations(
        raw in "[\\[\\]0-9ivxIVX,;.> a-z]{0,120}",
        n in 1..=32usize,
    ) {
        if let Ok((perm, _)) = parse_ranking(&raw, n) {
            prop_assert!(is_permutation(&perm, n));
        }
    }

    #[test]
    fn repair_always_returns_a_permutation(
        parsed in prop::collection::vec(0..100usize, 0..80),
        n in 1..=40usize,
    ) {
        prop_assert!(is_permutation(&repair_permutation(&parsed, n), n));
    }
}

proptest! {
    // NDCG lives in [0, 1], and documents without judgments carry zero
    // gain, so shuffling them among their own positions is invisible.
    #[test]
    fn ndcg_is_bounded_and_blind_to_unjudged_order(
        (grades, order, k) in (2..=40usize).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::option::of(0u32..=3), n),
                Just((0..n).collect::<Vec<usize>>()).prop_shuffle(),
                1..=n,
            )
        }),
    ) {
        prop_assume!(grades.iter().any(Option::is_some));
        let mut qrels = Qrels::new();
        for (i, g) in grades.iter().enumerate() {
            if let Some(g) = g {
                qrels.insert("q", format!("d{i}"), *g);
            }
        }
        let ranking: Vec<String> = order.iter().map(|i| format!("d{i}")).collect();
        let value = ndcg_at_k(&qrels, "q", &ranking, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&value), "ndcg {value}");

        // Rotate the unjudged documents through the slots they occupy.
        let slots: Vec<usize> = (0..ranking.len())
            .filter(|&pos| grades[order[pos]].is_none())
            .collect();
        let mut rotated = ranking.clone();
        for w in 0..slots.len() {
            rotated[slots[w]] = ranking[slots[(w + 1) % slots.len()]].clone();
        }
        let rotated_value = ndcg_at_k(&qrels, "q", &rotated, k).unwrap();
        prop_assert_eq!(value.to_bits(), rotated_value.to_bits());
    }

    // Shifting every score by the same amount moves WIG by exactly the
    // difference of the per-document log shifts, and a flat profile stays
    // at exactly zero before and after.
    #[test]
    fn wig_translation_matches_direct_recomputation(
        (scores, window) in (1..=80usize).prop_flat_map(|n| {
            (prop::collection::vec(-0.9..50.0f64, n), 1..=n)
        }),
        shift in 0.01..20.0f64,
        level in -0.9..50.0f64,
    ) {
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let moved = wig(&shifted, window).unwrap() - wig(&scores, window).unwrap();
        let log_shift: Vec<f64> = scores
            .iter()
            .map(|&s| ((1.0 + s + shift) / (1.0 + s)).ln())
            .collect();
        let direct = log_shift[..window].iter().sum::<f64>() / window as f64
            - log_shift.iter().sum::<f64>() / log_shift.len() as f64;
        prop_assert!((moved - direct).abs() <= 1e-10, "gap {:e}", (moved - direct).abs());

        let flat = vec![level; scores.len()];
        prop_assert_eq!(wig(&flat, window).unwrap(), 0.0);
        let flat_shifted = vec![level + shift; scores.len()];
        prop_assert_eq!(wig(&flat_shifted, window).unwrap(), 0.0);
    }

    // Spearman sees only ranks, so any strictly increasing transform of
    // one side reproduces rho and the p-value bit for bit.
    #[test]
    fn spearman_ignores_strictly_increasing_transforms(
        pairs in prop::collection::vec((-500..500i32, -500..500i32), 4..40),
        scale in 0.5..4.0f64,
        offset in -10.0..10.0f64,
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 10.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 10.0).collect();
        prop_assume!(xs.iter().any(|&x| x != xs[0]));
        prop_assume!(ys.iter().any(|&y| y != ys[0]));

        let base = spearman(&xs, &ys).unwrap();
        for mapped in [
            xs.iter().map(|&x| scale * x + offset).collect::<Vec<f64>>(),
            xs.iter().map(|&x| x * x * x).collect::<Vec<f64>>(),
        ] {
            let got = spearman(&mapped, &ys).unwrap();
            prop_assert_eq!(got.rho.to_bits(), base.rho.to_bits());
            prop_assert_eq!(got.p_value.to_bits(), base.p_value.to_bits());
        }
    }

    // Each dataset contributes through its mean alone, so the macro
    // average ignores how many queries a dataset happens to contain.
    #[test]
    fn macro_average_ignores_dataset_sizes(
        datasets in prop::collection::vec(
            prop::collection::vec(0.0..1.0f64, 1..25),
            1..8,
        ),
        repeat in 2..=4usize,
    ) {
        let value = macro_average(&datasets).unwrap();
        let by_hand = datasets
            .iter()
            .map(|d| d.iter().sum::<f64>() / d.len() as f64)
            .sum::<f64>()
            / datasets.len() as f64;
        prop_assert!((value - by_hand).abs() <= 1e-12);

        let inflated: Vec<Vec<f64>> = datasets
            .iter()
            .map(|d| d.iter().cycle().take(d.len() * repeat).copied().collect())
            .collect();
        let inflated_value = macro_average(&inflated).unwrap();
        prop_assert!((value - inflated_value).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // The budget is a hard ceiling, the call counter reconciles with the
    // per-iteration trace, and the final ranking is always a permutation
    // of the candidates.
    #[test]
    fn budget_caps_every_randomized_run(
        grades in prop::collection::vec(0u32..=3, 2..35),
        k in 1..=10usize,
        m in 2..=25usize,
        epsilon in 0.001..0.3f64,
        max_calls in 0..=25usize,
        temperature in 0.05..3.0f64,
        seed in any::<u64>(),
    ) {
        let task = QueryTask::new("q", "query", graded_passages("d", &grades)).unwrap();
        let config = SchedulerConfig {
            k,
            m,
            epsilon,
            max_calls: Some(max_calls),
            seed,
            ..Default::default()
        };
        let backend = NoisyReranker::new(temperature, seed).unwrap();
        let trace = run_acurank(&task, &config, &backend).unwrap();

        prop_assert!(trace.calls_made <= max_calls);
        let issued: usize = trace.per_iteration.iter().map(|it| it.batch_sizes.len()).sum();
        prop_assert_eq!(trace.calls_made, issued);
        prop_assert!(trace.failed_calls <= trace.calls_made);
        let active = trace
            .per_iteration
            .iter()
            .filter(|it| !it.batch_sizes.is_empty())
            .count();
        prop_assert_eq!(trace.iterations, active);

        let expected: Vec<String> = (0..grades.len()).map(|i| format!("d{i}")).collect();
        prop_assert_eq!(sorted_ids(&trace.final_ranking), sorted_ids(&expected));
    }

    // Fixed-computation baselines spend a call count determined by shape
    // and config alone; swapping in entirely different documents changes
    // the ordering but never the bill, and the output always remains a
    // permutation.
    #[test]
    fn baselines_spend_fixed_calls_and_emit_permutations(
        (grades_a, grades_b) in (1..=50usize).prop_flat_map(|n| {
            (
                prop::collection::vec(0u32..=3, n),
                prop::collection::vec(0u32..=3, n),
            )
        }),
        window in 2..=10usize,
        stride_frac in 0.0..1.0f64,
        passes in 1..=3usize,
        temperature in 0.1..3.0f64,
        seed in any::<u64>(),
    ) {
        let task_a = QueryTask::new("q", "query", graded_passages("a", &grades_a)).unwrap();
        let task_b = QueryTask::new("q", "query", graded_passages("b", &grades_b)).unwrap();
        let backend = NoisyReranker::new(temperature, seed).unwrap();

        let sw = SlidingWindowConfig {
            window,
            stride: 1 + (stride_frac * (window - 1) as f64) as usize,
            passes,
        };
        let tr = TourRankConfig { seed, ..Default::default() };
        let ts = TrueSkillStaticConfig::default();

        let runs = [
            (run_sliding_window(&task_a, &sw, &backend).unwrap(),
             run_sliding_window(&task_b, &sw, &backend).unwrap()),
            (run_tourrank(&task_a, &tr, &backend).unwrap(),
             run_tourrank(&task_b, &tr, &backend).unwrap()),
            (run_trueskill_static(&task_a, &ts, &backend).unwrap(),
             run_trueskill_static(&task_b, &ts, &backend).unwrap()),
        ];
        for (a, b) in &runs {
            prop_assert_eq!(a.calls_made, b.calls_made);
            let ids_a: Vec<String> = (0..grades_a.len()).map(|i| format!("a{i}")).collect();
            let ids_b: Vec<String> = (0..grades_b.len()).map(|i| format!("b{i}")).collect();
            prop_assert_eq!(sorted_ids(&a.final_ranking), sorted_ids(&ids_a));
            prop_assert_eq!(sorted_ids(&b.final_ranking), sorted_ids(&ids_b));
        }
    }
}
