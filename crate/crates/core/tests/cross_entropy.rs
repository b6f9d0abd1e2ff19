use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tmerge_core::ce_eval::{ce_optimize, CeConfig};

/// Standalone fixed-σ CE on a deterministic reward.
fn brute_force_ce(reward: impl Fn(f64) -> f64, mu0: f64, sigma: f64, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mu = mu0;
    for _ in 0..50 {
        let normal = Normal::new(mu, sigma).unwrap();
        let mut pairs: Vec<(f64, f64)> = (0..n).map(|_| {
            let b = normal.sample(&mut rng);
            (reward(b), b)
        }).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let k = (n as f64 * 0.1).ceil() as usize;
        let next = pairs[..k].iter().map(|p| p.1).sum::<f64>() / k as f64;
        let done = (next - mu).abs() < 0.01;
        mu = next;
        if done {
            break;
        }
    }
    mu
}

fn distance_to(c: f64) -> impl Fn(f64, u64) -> tmerge_core::Result<f64> + Sync {
    move |b, _| Ok((b - c).abs())
}

#[test]
fn fixed_point_of_distance_reward() {
    let cfg = CeConfig { mu0: 0.0, sigma: 0.5, seed: 1, ..CeConfig::default() };
    let r = ce_optimize(distance_to(2.0), &cfg).unwrap();
    let oracle = brute_force_ce(|b| (b - 2.0).abs(), 0.0, 0.5, 100_000, 7);
    assert!(r.converged);
    assert!(r.trace.len() <= 50);
    assert!((1.9..=2.1).contains(&r.mu_star), "μ* = {}", r.mu_star);
    assert!((1.9..=2.1).contains(&oracle));
    assert!((r.mu_star - oracle).abs() < 0.1);
}

#[test]
fn trace_is_consistent() {
    let cfg = CeConfig { mu0: -1.0, sigma: 0.5, n_ce: 200, seed: 4, ..CeConfig::default() };
    let r = ce_optimize(distance_to(1.0), &cfg).unwrap();
    for (i, w) in r.trace.windows(2).enumerate() {
        assert_eq!(w[0].next_mu, w[1].mu, "iteration {i}");
    }
    for it in &r.trace {
        assert!(it.n_elite >= 20);
        assert!(it.elite_mean_reward <= it.elite_threshold);
    }
    assert_eq!(r.trace.last().unwrap().next_mu, r.mu_star);
    assert_eq!(r.trace[0].mu, -1.0);
}

#[test]
fn iteration_cap_reports_non_convergence() {
    let cfg = CeConfig { mu0: 0.0, sigma: 0.5, max_iterations: 2, seed: 2, ..CeConfig::default() };
    let r = ce_optimize(distance_to(3.0), &cfg).unwrap();
    assert!(!r.converged);
    assert_eq!(r.trace.len(), 2);
}

#[test]
fn objective_errors_propagate() {
    let cfg = CeConfig::default();
    let r = ce_optimize(|_, _| Err(tmerge_core::Error::TerminalState), &cfg);
    assert!(matches!(r, Err(tmerge_core::Error::TerminalState)));
}

#[test]
fn repeats_average_noisy_rewards() {
    // Reward noise depends on the seed only; averaging four draws still finds
    // the minimum.
    let noisy = |b: f64, s: u64| Ok((b - 1.5).abs() + ((s % 7) as f64 - 3.0) * 0.05);
    let cfg = CeConfig { mu0: 0.0, sigma: 0.5, repeats: 4, seed: 3, ..CeConfig::default() };
    let r = ce_optimize(noisy, &cfg).unwrap();
    assert!((r.mu_star - 1.5).abs() < 0.15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn locates_any_minimum(c in -1.0f64..3.0, seed in 0u64..10_000) {
        let cfg = CeConfig { mu0: 1.0, sigma: 0.5, seed, ..CeConfig::default() };
        let r = ce_optimize(distance_to(c), &cfg).unwrap();
        prop_assert!((r.mu_star - c).abs() < 0.1, "target {} found {}", c, r.mu_star);
    }
}
