use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::SurvivalOutcome;
use crate::tensor::Tensor;

fn so(time: f64, event: bool) -> SurvivalOutcome {
    SurvivalOutcome::new(0, time, event)
}

fn column(x: &[f64]) -> Tensor {
    Tensor::matrix(x.len(), 1, x.to_vec()).unwrap()
}

/// Right-censored D=1 partial likelihood written out term by term.
fn brute_loglik(t: &[f64], e: &[bool], x: &[f64], beta: f64, ties: Ties) -> f64 {
    let mut times: Vec<f64> = (0..t.len()).filter(|&i| e[i]).map(|i| t[i]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut ll = 0.0;
    for &s in &times {
        let deaths: Vec<usize> = (0..t.len()).filter(|&i| e[i] && t[i] == s).collect();
        let risk: f64 = (0..t.len()).filter(|&i| t[i] >= s).map(|i| (beta * x[i]).exp()).sum();
        let tied: f64 = deaths.iter().map(|&i| (beta * x[i]).exp()).sum();
        let m = deaths.len() as f64;
        for (l, &i) in deaths.iter().enumerate() {
            ll += beta * x[i];
            let frac = if ties == Ties::Efron { l as f64 / m } else { 0.0 };
            ll -= (risk - frac * tied).ln();
        }
    }
    ll
}

fn grid_argmax(f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=100_000 {
        let b = -5.0 + k as f64 * 1e-4;
        let v = f(b);
        if v > best.0 {
            best = (v, b);
        }
    }
    best.1
}

#[test]
fn breslow_fit_matches_grid_search() {
    let t = [1.0, 2.0, 3.0, 4.0];
    let e = [true, true, true, false];
    let x = [0.0, 1.0, 0.0, 1.0];
    let outcomes: Vec<_> = t.iter().zip(&e).map(|(&t, &e)| so(t, e)).collect();
    let opts = CoxOptions {
        ties: Ties::Breslow,
        ..CoxOptions::default()
    };
    let fit = fit_cox(&column(&x), &outcomes, &opts).unwrap();
    let grid = grid_argmax(|b| brute_loglik(&t, &e, &x, b, Ties::Breslow));
    assert!((fit.beta[0] - grid).abs() < 1e-3, "{} vs {grid}", fit.beta[0]);
    assert!(fit.converged);
}

#[test]
fn random_small_instances_match_grid_search_for_both_tie_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 10 {
        let n = rng.random_range(3..=6);
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(1..=4) as f64).collect();
        let e: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for ties in [Ties::Efron, Ties::Breslow] {
            let grid = grid_argmax(|b| brute_loglik(&t, &e, &x, b, ties));
            if grid.abs() > 4.5 || !e.iter().any(|&v| v) {
                continue;
            }
            let outcomes: Vec<_> = t.iter().zip(&e).map(|(&t, &e)| so(t, e)).collect();
            let fit = fit_cox(
                &column(&x),
                &outcomes,
                &CoxOptions {
                    ties,
                    ..CoxOptions::default()
                },
            )
            .unwrap();
            assert!(
                (fit.beta[0] - grid).abs() < 1e-3,
                "{ties}: {} vs {grid} on {t:?} {e:?} {x:?}",
                fit.beta[0]
            );
            let ll = brute_loglik(&t, &e, &x, fit.beta[0], ties);
            assert!((fit.log_partial_likelihood - ll).abs() < 1e-9);
            checked += 1;
        }
    }
}

#[test]
fn separated_data_is_flagged() {
    let outcomes = [so(1.0, true), so(2.0, true)];
    let fit = fit_cox(&column(&[1.0, 0.0]), &outcomes, &CoxOptions::default()).unwrap();
    assert!(fit.separation);
    assert!(fit.beta[0] > 5.0);
}

#[test]
fn ridge_keeps_separated_coefficients_finite() {
    let outcomes = [so(1.0, true), so(2.0, true)];
    let opts = CoxOptions {
        ridge: 1.0,
        ..CoxOptions::default()
    };
    let fit = fit_cox(&column(&[1.0, 0.0]), &outcomes, &opts).unwrap();
    assert!(fit.converged && !fit.separation);
    assert!(fit.beta[0] > 0.0 && fit.beta[0] < 2.0);
}

#[test]
fn constant_feature_has_no_effect() {
    let outcomes = [so(1.0, true), so(2.0, false), so(3.0, true), so(4.0, true)];
    let fit = fit_cox(&column(&[2.0; 4]), &outcomes, &CoxOptions::default()).unwrap();
    assert_eq!(fit.beta[0], 0.0);
    assert_eq!(fit.c_index, 0.5);
    assert!(fit.converged);
}

#[test]
fn no_events_is_an_error() {
    let outcomes = [so(1.0, false), so(2.0, false)];
    assert!(fit_cox(&column(&[1.0, 0.0]), &outcomes, &CoxOptions::default()).is_err());
}

fn random_data(seed: u64, n: usize, d: usize) -> (Tensor, Vec<SurvivalOutcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let outcomes = (0..n)
        .map(|i| {
            let eta: f64 = x[i * d..(i + 1) * d]
                .iter()
                .enumerate()
                .map(|(j, v)| v * (j as f64 - 0.5))
                .sum();
            let u: f64 = rng.random_range(0.0..1.0f64);
            let time = (-u.ln() / eta.exp() * 10.0).ceil();
            SurvivalOutcome::new(i as i64, time, rng.random_bool(0.75))
        })
        .collect();
    (Tensor::matrix(n, d, x).unwrap(), outcomes)
}

#[test]
fn likelihood_never_decreases_across_iterations() {
    let (x, y) = random_data(3, 40, 3);
    let mut prev = f64::NEG_INFINITY;
    for k in 0..8 {
        let fit = fit_cox(
            &x,
            &y,
            &CoxOptions {
                max_iter: k,
                ..CoxOptions::default()
            },
        )
        .unwrap();
        assert!(fit.log_partial_likelihood >= prev - 1e-12);
        prev = fit.log_partial_likelihood;
    }
}

#[test]
fn aic_identity_and_covariance_shape() {
    let (x, y) = random_data(4, 50, 3);
    let fit = fit_cox(&x, &y, &CoxOptions::default()).unwrap();
    assert_eq!(fit.aic, 2.0 * 3.0 - 2.0 * fit.log_partial_likelihood);
    let c = &fit.covariance;
    for r in 0..3 {
        assert!(c[r][r] > 0.0);
        for s in 0..3 {
            assert_eq!(c[r][s], c[s][r]);
        }
    }
    let json = serde_json::to_value(fit.summary()).unwrap();
    for key in [
        "beta",
        "se",
        "z",
        "p",
        "c_index",
        "aic",
        "log_partial_likelihood",
        "n",
        "n_events",
        "converged",
    ] {
        assert!(json.get(key).is_some(), "{key}");
    }
}

#[test]
fn rescaling_a_column_rescales_its_coefficient() {
    let (x, y) = random_data(5, 60, 2);
    let fit = fit_cox(&x, &y, &CoxOptions::default()).unwrap();
    let mut scaled = x.clone();
    for i in 0..60 {
        let v = scaled.get(i, 1);
        scaled.set(i, 1, 3.0 * v + 7.0);
    }
    let fit2 = fit_cox(&scaled, &y, &CoxOptions::default()).unwrap();
    assert!((fit2.beta[1] * 3.0 - fit.beta[1]).abs() < 1e-8);
    assert!((fit2.beta[0] - fit.beta[0]).abs() < 1e-8);
    assert!((fit2.log_partial_likelihood - fit.log_partial_likelihood).abs() < 1e-8);
    assert!((fit2.c_index - fit.c_index).abs() < 1e-12);
    let lp1 = fit.risk_scores(&x).unwrap();
    let lp2 = fit2.risk_scores(&scaled).unwrap();
    let shift = lp2[0] - lp1[0];
    for (a, b) in lp1.iter().zip(&lp2) {
        assert!((b - a - shift).abs() < 1e-8);
    }
}

#[test]
fn score_residuals_sum_to_the_score() {
    let (x, y) = random_data(6, 30, 2);
    let data = CoxData::from_outcomes(&x, &y).unwrap();
    for ties in [Ties::Efron, Ties::Breslow] {
        let (sum, score) = cox::residual_sum_and_score(&data, &[0.3, -0.8], ties);
        for (a, b) in sum.iter().zip(&score) {
            assert!((a - b).abs() < 1e-10, "{ties}: {a} vs {b}");
        }
    }
}

#[test]
fn single_cluster_sandwich_vanishes_at_the_optimum() {
    let (x, y) = random_data(7, 30, 2);
    let data = CoxData::from_outcomes(&x, &y)
        .unwrap()
        .with_cluster(vec![1; 30])
        .unwrap();
    let fit = fit_cox_data(&data, &CoxOptions::default()).unwrap();
    assert!(fit.robust);
    assert!(fit.covariance.iter().flatten().all(|v| v.abs() < 1e-12));
}

#[test]
fn cluster_labels_do_not_matter() {
    let (x, y) = random_data(8, 30, 2);
    let ids: Vec<i64> = (0..30).map(|i| i / 3).collect();
    let relabelled: Vec<i64> = ids.iter().map(|i| 100 - 7 * i).collect();
    let a = fit_cox_data(
        &CoxData::from_outcomes(&x, &y).unwrap().with_cluster(ids).unwrap(),
        &CoxOptions::default(),
    )
    .unwrap();
    let b = fit_cox_data(
        &CoxData::from_outcomes(&x, &y)
            .unwrap()
            .with_cluster(relabelled)
            .unwrap(),
        &CoxOptions::default(),
    )
    .unwrap();
    for (r, s) in a.covariance.iter().flatten().zip(b.covariance.iter().flatten()) {
        assert!((r - s).abs() < 1e-12);
    }
}

#[test]
fn counting_process_rows_split_at_a_cut_give_the_same_fit() {
    let (x, y) = random_data(9, 25, 1);
    let base = fit_cox(&x, &y, &CoxOptions::default()).unwrap();
    // Split every subject's follow-up at half its time.
    let mut rows = Vec::new();
    let (mut start, mut stop, mut event) = (Vec::new(), Vec::new(), Vec::new());
    for (i, o) in y.iter().enumerate() {
        let mid = o.time / 2.0;
        rows.push(vec![x.get(i, 0)]);
        start.push(0.0);
        stop.push(mid);
        event.push(false);
        rows.push(vec![x.get(i, 0)]);
        start.push(mid);
        stop.push(o.time);
        event.push(o.event);
    }
    let data = CoxData::new(&rows, stop, event).unwrap().with_start(start).unwrap();
    let split = fit_cox_data(&data, &CoxOptions::default()).unwrap();
    assert!((split.beta[0] - base.beta[0]).abs() < 1e-10);
    assert!((split.log_partial_likelihood - base.log_partial_likelihood).abs() < 1e-10);
}

#[test]
fn strata_separate_the_risk_sets() {
    let (x, y) = random_data(10, 40, 1);
    let strata: Vec<i64> = (0..40).map(|i| i % 2).collect();
    let data = CoxData::from_outcomes(&x, &y).unwrap().with_strata(strata).unwrap();
    let fit = fit_cox_data(&data, &CoxOptions::default()).unwrap();
    let ll = |rows: Vec<usize>| {
        let sub = CoxData::new(
            &rows.iter().map(|&i| vec![x.get(i, 0)]).collect::<Vec<_>>(),
            rows.iter().map(|&i| y[i].time).collect(),
            rows.iter().map(|&i| y[i].event).collect(),
        )
        .unwrap();
        partial_log_likelihood(&sub, &fit.beta, Ties::Efron).unwrap()
    };
    let total = ll((0..40).step_by(2).collect()) + ll((1..40).step_by(2).collect());
    assert!((total - fit.log_partial_likelihood).abs() < 1e-9);
}

#[test]
fn breslow_baseline_matches_hand_values() {
    let outcomes = [so(1.0, true), so(2.0, false), so(3.0, true)];
    let data = CoxData::from_outcomes(&column(&[0.0, 0.0, 0.0]), &outcomes).unwrap();
    let fit = fit_cox_data(&data, &CoxOptions::default()).unwrap();
    let h = baseline_hazard(&data, &fit).unwrap();
    assert_eq!(h.len(), 2);
    assert!((h[0].cumulative_hazard - 1.0 / 3.0).abs() < 1e-12);
    assert!((h[1].cumulative_hazard - (1.0 / 3.0 + 1.0)).abs() < 1e-12);
}

fn brute_cindex(risk: &[f64], o: &[SurvivalOutcome]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..o.len() {
        for j in 0..o.len() {
            if i == j || !o[i].event {
                continue;
            }
            let comparable = o[i].time < o[j].time || (o[i].time == o[j].time && !o[j].event);
            if !comparable {
                continue;
            }
            den += 1.0;
            if risk[i] > risk[j] {
                num += 1.0;
            } else if risk[i] == risk[j] {
                num += 0.5;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

#[test]
fn cindex_hand_cases() {
    let o: Vec<_> = (1..=4).map(|t| so(t as f64, true)).collect();
    assert_eq!(concordance_index(&[4.0, 3.0, 2.0, 1.0], &o).unwrap(), 1.0);
    assert_eq!(concordance_index(&[1.0; 4], &o).unwrap(), 0.5);
    assert!(concordance_index(&[1.0, 2.0], &[so(1.0, false), so(2.0, false)]).is_err());
    assert!(concordance_index(&[1.0], &o).is_err());
}

#[test]
fn cindex_matches_pair_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let o: Vec<_> = (0..n)
            .map(|_| so(rng.random_range(1..=6) as f64, rng.random_bool(0.6)))
            .collect();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        match brute_cindex(&r, &o) {
            Some(c) => assert_eq!(concordance_index(&r, &o).unwrap(), c),
            None => assert!(concordance_index(&r, &o).is_err()),
        }
    }
}

proptest! {
    #[test]
    fn cindex_of_negated_scores_is_complementary(
        times in proptest::collection::vec(1u8..10, 2..25),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let o: Vec<_> = times.iter().map(|&t| so(t as f64, rng.random_bool(0.7))).collect();
        let r: Vec<f64> = (0..o.len()).map(|i| i as f64 + rng.random_range(0.0..0.5)).collect();
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        if let (Ok(a), Ok(b)) = (concordance_index(&r, &o), concordance_index(&neg, &o)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn km_is_non_increasing_and_bounded(
        data in proptest::collection::vec((1u8..20, any::<bool>()), 1..40),
    ) {
        let o: Vec<_> = data.iter().map(|&(t, e)| so(t as f64, e)).collect();
        let km = kaplan_meier(&o);
        prop_assert!(km.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(km.survival.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(km.survival.iter().all(|s| (0.0..=1.0).contains(s)));
    }
}

#[test]
fn km_hand_cases() {
    let km = kaplan_meier(&[so(1.0, true), so(2.0, false), so(3.0, true)]);
    assert!((km.at(1.0) - 2.0 / 3.0).abs() < 1e-10);
    assert!(km.at(3.0).abs() < 1e-10);
    assert_eq!(km.at_risk, vec![3, 2, 1]);
    let all_censored = kaplan_meier(&[so(1.0, false), so(4.0, false)]);
    assert!(all_censored.survival.iter().all(|&s| s == 1.0));
    assert_eq!(kaplan_meier(&[so(5.0, true)]).at(5.0), 0.0);
}

#[test]
fn km_of_merged_risk_groups_equals_pooled_km() {
    let (_, y) = random_data(11, 31, 1);
    let scores: Vec<f64> = (0..31).map(|i| ((i * 17) % 31) as f64).collect();
    let split = risk_groups(&scores).unwrap();
    let (hi, lo) = split.partition(&y);
    let merged: Vec<_> = hi.into_iter().chain(lo).collect();
    assert_eq!(kaplan_meier(&merged), kaplan_meier(&y));
}

#[test]
fn logrank_hand_table() {
    let a = [so(1.0, true), so(2.0, true)];
    let b = [so(3.0, true), so(4.0, true)];
    let lr = logrank_test(&a, &b).unwrap();
    assert!((lr.observed_a - 2.0).abs() < 1e-10);
    assert!((lr.expected_a - 5.0 / 6.0).abs() < 1e-10);
    assert!((lr.variance - 17.0 / 36.0).abs() < 1e-10);
    assert!((lr.chi2 - 49.0 / 17.0).abs() < 1e-10);
}

#[test]
fn logrank_identical_groups() {
    let (_, y) = random_data(12, 20, 1);
    let lr = logrank_test(&y, &y).unwrap();
    assert!(lr.chi2.abs() < 1e-12);
    assert!((lr.p - 1.0).abs() < 1e-9);
    assert!(logrank_test(&[so(1.0, false)], &[so(2.0, false)]).is_err());
}

#[test]
fn logrank_p_falls_as_groups_separate() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let base: Vec<f64> = (0..40).map(|_| -rng.random_range(0.0..1.0f64).ln()).collect();
    let a: Vec<_> = base[..20].iter().map(|&t| so(t, true)).collect();
    let mut last = 1.1;
    for k in [1.0, 1.5, 2.5, 4.0, 8.0] {
        let b: Vec<_> = base[20..].iter().map(|&t| so(t * k, true)).collect();
        let p = logrank_test(&a, &b).unwrap().p;
        assert!(p <= last, "p rose to {p} at factor {k}");
        last = p;
    }
    assert!(last < 1e-3);
}

#[test]
fn median_split() {
    let s = risk_groups(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(s.high, vec![false, false, true, true]);
    let flat = risk_groups(&[2.0; 5]).unwrap();
    assert!(flat.degenerate && flat.n_high() == 0);
    let odd = risk_groups(&(0..118).map(|i| (i * 37 % 118) as f64).collect::<Vec<_>>()).unwrap();
    assert_eq!(odd.n_high(), 59);
}
