//! Cross-entropy search for a failure-seeking proposal and the
//! importance-sampling failure-rate estimator.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{likelihood_ratio, quadrature_mass_on, ScenarioDistribution, WeightCap};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::simulator::{rollout, Driver, Outcome, Scenario};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CeConfig {
    pub mu0: f64,
    pub sigma: f64,
    /// β samples per iteration.
    pub n_ce: usize,
    pub elite_quantile: f64,
    /// Stop once the mean moves by less than this.
    pub threshold: f64,
    pub max_iterations: usize,
    /// Episodes averaged per sampled β.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for CeConfig {
    fn default() -> Self {
        Self {
            mu0: 0.0,
            sigma: 0.5,
            n_ce: 500,
            elite_quantile: 0.10,
            threshold: 0.01,
            max_iterations: 50,
            repeats: 1,
            seed: 0,
        }
    }
}

impl CeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !self.mu0.is_finite() {
            return bad("CE initial mean must be finite");
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("CE sigma must be finite and > 0");
        }
        if !(self.elite_quantile > 0.0 && self.elite_quantile < 1.0) {
            return bad("elite quantile must lie in (0, 1)");
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad("CE threshold must be finite and > 0");
        }
        if self.n_ce < 10 {
            return bad("n_ce must be >= 10");
        }
        if self.max_iterations == 0 || self.repeats == 0 {
            return bad("max_iterations and repeats must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeIteration {
    pub iteration: usize,
    /// Proposal mean the samples were drawn from.
    pub mu: f64,
    pub elite_mean_reward: f64,
    /// Largest reward admitted to the elite set.
    pub elite_threshold: f64,
    pub n_elite: usize,
    pub next_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeResult {
    pub mu_star: f64,
    pub sigma: f64,
    pub converged: bool,
    pub trace: Vec<CeIteration>,
}

/// Indices of the bottom `quantile` of `rewards`, including every sample
/// tied with the boundary value.
pub fn elite_indices(rewards: &[f64], quantile: f64) -> Vec<usize> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((quantile * rewards.len() as f64).ceil() as usize).clamp(1, rewards.len());
    let cut = sorted[k - 1];
    (0..rewards.len()).filter(|&i| rewards[i] <= cut).collect()
}

/// Fixed-σ cross-entropy search for the β mean that minimizes reward.
///
/// `objective(β, seed)` returns one episode reward; each sampled β gets
/// `repeats` independent seeds and their mean reward.
pub fn ce_optimize<F>(objective: F, cfg: &CeConfig) -> Result<CeResult>
where
    F: Fn(f64, u64) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let stream = SeedStream::new(cfg.seed, "ce");
    let mut mu = cfg.mu0;
    let mut trace = Vec::new();
    for it in 0..cfg.max_iterations {
        let proposal = ScenarioDistribution::Gaussian { mu, sigma: cfg.sigma };
        let mut rng = stream.child("beta").rng(it as u64);
        let betas: Vec<f64> = (0..cfg.n_ce).map(|_| proposal.sample(&mut rng)).collect();
        let episodes = stream.child_indexed("episode", it as u64);
        let rewards: Vec<f64> = betas
            .par_iter()
            .enumerate()
            .map(|(j, &b)| {
                let mut total = 0.0;
                for r in 0..cfg.repeats {
                    total += objective(b, episodes.seed((j * cfg.repeats + r) as u64))?;
                }
                Ok(total / cfg.repeats as f64)
            })
            .collect::<Result<_>>()?;
        let elite = elite_indices(&rewards, cfg.elite_quantile);
        let n = elite.len() as f64;
        let next_mu = elite.iter().map(|&i| betas[i]).sum::<f64>() / n;
        trace.push(CeIteration {
            iteration: it,
            mu,
            elite_mean_reward: elite.iter().map(|&i| rewards[i]).sum::<f64>() / n,
            elite_threshold: elite.iter().map(|&i| rewards[i]).fold(f64::NEG_INFINITY, f64::max),
            n_elite: elite.len(),
            next_mu,
        });
        let delta = (next_mu - mu).abs();
        mu = next_mu;
        if delta < cfg.threshold {
            return Ok(CeResult { mu_star: mu, sigma: cfg.sigma, converged: true, trace });
        }
    }
    Ok(CeResult { mu_star: mu, sigma: cfg.sigma, converged: false, trace })
}

/// CE against the ego's discounted return, with every social at the sampled β.
pub fn ce_optimize_policy(
    scenario: &Scenario,
    ego: &dyn Driver,
    meta: &dyn Driver,
    gamma: f64,
    cfg: &CeConfig,
) -> Result<CeResult> {
    let n = scenario.config.n_social;
    ce_optimize(
        |b, seed| Ok(rollout(scenario, ego, meta, &vec![b; n], seed, gamma)?.ego_return),
        cfg,
    )
}

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub index: usize,
    pub beta: f64,
    pub seed: u64,
    pub weight: f64,
    pub outcome: Outcome,
    pub ego_return: f64,
    pub length: usize,
}

/// Episode result reported by an evaluation callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub outcome: Outcome,
    pub ego_return: f64,
    pub length: usize,
}

impl From<Outcome> for EpisodeSummary {
    fn from(outcome: Outcome) -> Self {
        Self { outcome, ego_return: 0.0, length: 0 }
    }
}

/// Rate and per-episode standard deviation of one indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStat {
    pub rate: f64,
    pub std: f64,
}

impl RateStat {
    fn of(values: impl Iterator<Item = f64> + Clone, n: usize) -> Self {
        let nf = n as f64;
        let rate = values.clone().sum::<f64>() / nf;
        let var = values.map(|v| (v - rate).powi(2)).sum::<f64>() / nf;
        Self { rate, std: var.sqrt() }
    }

    /// Standard error of the rate.
    pub fn std_error(&self, n: usize) -> f64 {
        self.std / (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub proposal: ScenarioDistribution,
    pub naturalistic: ScenarioDistribution,
    pub n_samples: usize,
    /// IS-weighted collision-or-timeout rate.
    pub failure: RateStat,
    pub success: RateStat,
    pub collision: RateStat,
    pub timeout: RateStat,
    pub unweighted_success: RateStat,
    pub unweighted_collision: RateStat,
    pub unweighted_timeout: RateStat,
    pub mean_weight: f64,
    pub max_weight: f64,
    /// `Σw / max w`
    pub ess_max: f64,
    /// `(Σw)² / Σw²`
    pub ess: f64,
    #[serde(skip)]
    pub episodes: Vec<EvalEpisode>,
}

impl EvalReport {
    pub fn failure_rate(&self) -> f64 {
        self.failure.rate
    }

    /// Builds the report from evaluated episodes.
    pub fn from_episodes(
        proposal: ScenarioDistribution,
        naturalistic: ScenarioDistribution,
        episodes: Vec<EvalEpisode>,
    ) -> Result<Self> {
        let n = episodes.len();
        if n == 0 {
            return Err(Error::Empty("evaluation episodes"));
        }
        let ind = |o: Outcome| move |e: &EvalEpisode| if e.outcome == o { 1.0 } else { 0.0 };
        let weighted = |o: Outcome| RateStat::of(episodes.iter().map(move |e| e.weight * ind(o)(e)), n);
        let plain = |o: Outcome| RateStat::of(episodes.iter().map(ind(o)), n);
        let failure = RateStat::of(
            episodes
                .iter()
                .map(|e| if e.outcome.is_failure() { e.weight } else { 0.0 }),
            n,
        );
        let sum_w: f64 = episodes.iter().map(|e| e.weight).sum();
        let sum_w2: f64 = episodes.iter().map(|e| e.weight * e.weight).sum();
        let max_w = episodes.iter().map(|e| e.weight).fold(0.0, f64::max);
        Ok(Self {
            proposal,
            naturalistic,
            n_samples: n,
            failure,
            success: weighted(Outcome::Success),
            collision: weighted(Outcome::Collision),
            timeout: weighted(Outcome::Timeout),
            unweighted_success: plain(Outcome::Success),
            unweighted_collision: plain(Outcome::Collision),
            unweighted_timeout: plain(Outcome::Timeout),
            mean_weight: sum_w / n as f64,
            max_weight: max_w,
            ess_max: if max_w > 0.0 { sum_w / max_w } else { 0.0 },
            ess: if sum_w2 > 0.0 { sum_w * sum_w / sum_w2 } else { 0.0 },
            episodes,
        })
    }

    pub fn csv_header() -> &'static str {
        "policy,training_distribution,success,collision,timeout"
    }

    /// `policy,training_distribution,success ± std,collision ± std,timeout ± std`
    pub fn csv_row(&self, policy: &str, training: &str) -> String {
        let cell = |r: &RateStat| format!("{:.6} ± {:.6}", r.rate, r.std);
        format!(
            "{},{},{},{},{}",
            csv_field(policy),
            csv_field(training),
            cell(&self.success),
            cell(&self.collision),
            cell(&self.timeout)
        )
    }

    /// One JSON object per evaluated episode.
    pub fn write_episodes_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.episodes {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Quotes a CSV field when it contains a separator or quote.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Naturalistic mass a proposal may leave uncovered.
pub const SUPPORT_TOLERANCE: f64 = 1e-6;

/// Fails when a bounded proposal misses more than [`SUPPORT_TOLERANCE`] of
/// the naturalistic mass. Unbounded proposals always cover.
pub fn check_support(p_naturalistic: &ScenarioDistribution, proposal: &ScenarioDistribution) -> Result<()> {
    if let ScenarioDistribution::Uniform { lo, hi } = *proposal {
        let (a, b) = p_naturalistic.support_bounds(10.0);
        let below = if a < lo { quadrature_mass_on(p_naturalistic, a, lo) } else { 0.0 };
        let above = if b > hi { quadrature_mass_on(p_naturalistic, hi, b) } else { 0.0 };
        if below > SUPPORT_TOLERANCE {
            return Err(Error::SupportViolation { beta: lo });
        }
        if above > SUPPORT_TOLERANCE {
            return Err(Error::SupportViolation { beta: hi });
        }
    }
    Ok(())
}

/// Draws `n_samples` β from `p_evaluation`, runs one episode each via
/// `run(β, seed)` and weights outcomes by the uncapped ratio
/// `p_naturalistic(β) / p_evaluation(β)`.
pub fn evaluate_is_with<F>(
    run: F,
    p_evaluation: &ScenarioDistribution,
    p_naturalistic: &ScenarioDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<EvalReport>
where
    F: Fn(f64, u64) -> Result<EpisodeSummary> + Sync,
{
    if n_samples == 0 {
        return Err(Error::InvalidConfig("evaluation needs at least one sample".into()));
    }
    check_support(p_naturalistic, p_evaluation)?;
    let stream = SeedStream::new(seed, "eval");
    let mut rng = stream.child("beta").rng(0);
    let betas: Vec<f64> = (0..n_samples).map(|_| p_evaluation.sample(&mut rng)).collect();
    let weights: Vec<f64> = betas
        .iter()
        .map(|&b| likelihood_ratio(p_naturalistic, p_evaluation, b, WeightCap::Unbounded))
        .collect::<Result<_>>()?;
    let episodes = stream.child("episode");
    let results: Vec<EvalEpisode> = betas
        .par_iter()
        .zip(&weights)
        .enumerate()
        .map(|(i, (&beta, &weight))| {
            let seed = episodes.seed(i as u64);
            let s = run(beta, seed)?;
            Ok(EvalEpisode {
                index: i,
                beta,
                seed,
                weight,
                outcome: s.outcome,
                ego_return: s.ego_return,
                length: s.length,
            })
        })
        .collect::<Result<_>>()?;
    EvalReport::from_episodes(p_evaluation.clone(), p_naturalistic.clone(), results)
}

/// [`evaluate_is_with`] on simulator rollouts, every social at the sampled β.
pub fn evaluate_is(
    scenario: &Scenario,
    ego: &dyn Driver,
    meta: &dyn Driver,
    p_evaluation: &ScenarioDistribution,
    p_naturalistic: &ScenarioDistribution,
    n_samples: usize,
    seed: u64,
) -> Result<EvalReport> {
    let n = scenario.config.n_social;
    evaluate_is_with(
        |b, s| {
            let r = rollout(scenario, ego, meta, &vec![b; n], s, 0.99)?;
            Ok(EpisodeSummary { outcome: r.outcome, ego_return: r.ego_return, length: r.length })
        },
        p_evaluation,
        p_naturalistic,
        n_samples,
        seed,
    )
}
