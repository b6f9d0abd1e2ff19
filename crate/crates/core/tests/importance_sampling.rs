use proptest::prelude::*;
use tmerge_core::ce_eval::{evaluate_is_with, EpisodeSummary, EvalReport};
use tmerge_core::distributions::ScenarioDistribution;
use tmerge_core::{Error, Outcome};

fn fails_below_zero(beta: f64, _seed: u64) -> tmerge_core::Result<EpisodeSummary> {
    Ok(if beta < 0.0 { Outcome::Collision } else { Outcome::Success }.into())
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn gaussian(mu: f64, sigma: f64) -> ScenarioDistribution {
    ScenarioDistribution::gaussian(mu, sigma).unwrap()
}

fn run(p_eval: &ScenarioDistribution, n: usize, seed: u64) -> EvalReport {
    evaluate_is_with(fails_below_zero, p_eval, &gaussian(1.5, 0.5), n, seed).unwrap()
}

#[test]
fn threshold_failure_rate_matches_normal_tail() {
    let truth = normal_cdf(-3.0);
    let mut est: Vec<f64> = (0..10).map(|s| run(&gaussian(0.0, 0.5), 5000, s).failure.rate).collect();
    est.sort_by(f64::total_cmp);
    let median = 0.5 * (est[4] + est[5]);
    assert!((median - truth).abs() / truth < 0.2, "median {median} vs {truth}");
}

#[test]
fn naive_sampling_rarely_sees_the_event() {
    // Same budget drawn from the naturalistic distribution itself: about
    // 6.7 failures expected, so the relative error is far larger.
    let r = run(&gaussian(1.5, 0.5), 5000, 3);
    let is = run(&gaussian(0.0, 0.5), 5000, 3);
    let truth = normal_cdf(-3.0);
    assert!(is.failure.std_error(5000) < r.failure.std_error(5000).max(1e-12));
    assert!((is.failure.rate - truth).abs() < 4.0 * is.failure.std_error(5000));
}

#[test]
fn different_proposals_agree() {
    let a = run(&gaussian(0.0, 0.5), 5000, 11);
    let b = run(&gaussian(0.5, 0.75), 5000, 12);
    let se = (a.failure.std_error(5000).powi(2) + b.failure.std_error(5000).powi(2)).sqrt();
    assert!((a.failure.rate - b.failure.rate).abs() <= 3.0 * se);
}

#[test]
fn weights_average_to_one_under_a_covering_proposal() {
    let r = run(&gaussian(1.0, 0.8), 20_000, 5);
    let w: Vec<f64> = r.episodes.iter().map(|e| e.weight).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((mean - 1.0).abs() < 4.0 * sd / n.sqrt(), "mean weight {mean}");
    assert!((r.mean_weight - mean).abs() < 1e-12);
}

#[test]
fn effective_sample_sizes_follow_their_definitions() {
    let r = run(&gaussian(0.2, 0.6), 2000, 9);
    let w: Vec<f64> = r.episodes.iter().map(|e| e.weight).collect();
    let sum: f64 = w.iter().sum();
    let max = w.iter().copied().fold(0.0, f64::max);
    let sq: f64 = w.iter().map(|x| x * x).sum();
    assert!((r.ess_max - sum / max).abs() < 1e-9 * r.ess_max);
    assert!((r.ess - sum * sum / sq).abs() < 1e-9 * r.ess);
    assert!(r.ess <= 2000.0 + 1e-9 && r.ess_max <= r.ess + 1e-9);
}

#[test]
fn proposal_missing_naturalistic_mass_is_rejected() {
    let e = evaluate_is_with(fails_below_zero, &ScenarioDistribution::uniform(-1.0, 1.0).unwrap(), &gaussian(1.5, 0.5), 10, 0)
        .unwrap_err();
    assert!(matches!(e, Error::SupportViolation { .. }));
}

#[test]
fn evaluation_is_reproducible() {
    let a = run(&gaussian(0.0, 0.5), 300, 21);
    let b = run(&gaussian(0.0, 0.5), 300, 21);
    assert_eq!(a, b);
    assert_eq!(a.episodes, b.episodes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identical_proposal_reduces_to_plain_monte_carlo(mu in -1.0f64..3.0, sigma in 0.2f64..1.5, seed in 0u64..1000) {
        let p = gaussian(mu, sigma);
        let r = evaluate_is_with(fails_below_zero, &p, &p, 200, seed).unwrap();
        let fails = r.episodes.iter().filter(|e| e.beta < 0.0).count() as f64 / 200.0;
        prop_assert!(r.episodes.iter().all(|e| e.weight == 1.0));
        prop_assert_eq!(r.failure.rate, fails);
        prop_assert_eq!(r.failure.rate, r.unweighted_collision.rate);
        let p_ = r.unweighted_collision.rate;
        prop_assert!((r.unweighted_collision.std - (p_ * (1.0 - p_)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn outcome_rates_partition(mu in -0.5f64..2.0, seed in 0u64..1000) {
        let p = gaussian(mu, 0.7);
        let r = evaluate_is_with(
            |b, _| Ok(if b < 0.0 { Outcome::Collision } else if b > 2.0 { Outcome::Timeout } else { Outcome::Success }.into()),
            &p,
            &p,
            300,
            seed,
        ).unwrap();
        prop_assert!((r.success.rate + r.collision.rate + r.timeout.rate - 1.0).abs() < 1e-12);
        prop_assert!((r.failure.rate - r.collision.rate - r.timeout.rate).abs() < 1e-12);
    }
}
