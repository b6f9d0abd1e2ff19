//! Policy-gradient trainers.
//!
//! All three trainers share one REINFORCE core: per-step advantages are the
//! discounted reward-to-go minus a moving-average return kept per discretized
//! state cell, each episode's advantages are scaled by its importance weight,
//! and the batch gradient is applied after all episodes of the batch have been
//! generated. Episodes are generated in parallel but reduced in index order,
//! so results do not depend on the worker count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{likelihood_ratio, ScenarioDistribution, WeightCap};
use crate::error::{Error, Result};
use crate::policies::{
    kl_divergence, kl_probs, nearest_indices, ActionFeatures, BaselineSet, FeatureMap, MetaFeatures,
    SoftmaxPolicy, SocialFeatures,
};
use crate::rng::SeedStream;
use crate::simulator::{rollout, Driver, EpisodeRecord, FixedAction, Scenario, Vehicle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Episodes per update.
    pub batch: usize,
    pub updates: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Weight of the KL regularizer relative to the task gradient.
    pub reg_weight: f64,
    /// Replayed states per regularization step.
    pub reg_batch: usize,
    /// Cap on training importance weights.
    pub weight_cap: f64,
    /// Scale advantages by their batch standard deviation.
    pub normalize_advantages: bool,
    /// Step size of the per-cell moving-average return.
    pub baseline_rate: f64,
    /// Draw an independent β for every social vehicle instead of one per episode.
    pub per_vehicle_beta: bool,
    /// Ego only: adds `c·(γ·Φ(s') − Φ(s))` with `Φ = progress / goal` to the
    /// training reward. Logged returns are unshaped.
    pub progress_shaping: f64,
    /// Rescale each update's gradient to at most this Euclidean norm.
    pub max_grad_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            updates: 100,
            learning_rate: 0.05,
            gamma: 0.99,
            reg_weight: 1.0,
            reg_batch: 256,
            weight_cap: 20.0,
            normalize_advantages: true,
            baseline_rate: 0.1,
            per_vehicle_beta: false,
            progress_shaping: 1.0,
            max_grad_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch == 0 {
            return bad("batch must be > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.reg_weight >= 0.0) {
            return bad("reg_weight must be >= 0");
        }
        if self.max_grad_norm.is_some_and(|m| !(m > 0.0)) {
            return bad("max_grad_norm must be > 0");
        }
        if !(self.progress_shaping >= 0.0) {
            return bad("progress_shaping must be >= 0");
        }
        if self.reg_batch == 0 {
            return bad("reg_batch must be > 0");
        }
        if !(self.weight_cap >= 1.0) {
            return bad("weight_cap must be >= 1");
        }
        if !(self.baseline_rate > 0.0 && self.baseline_rate <= 1.0) {
            return bad("baseline_rate must lie in (0, 1]");
        }
        Ok(())
    }
}

/// One decision of the learning agent.
#[derive(Debug, Clone)]
pub struct LearnerStep {
    pub features: ActionFeatures,
    pub action: usize,
    /// Key into the return baseline, see [`baseline_key`].
    pub cell: usize,
    /// Discounted reward-to-go from this step.
    pub ret: f64,
}

/// One agent trajectory with its importance weight.
#[derive(Debug, Clone)]
pub struct LearnerEpisode {
    pub weight: f64,
    pub steps: Vec<LearnerStep>,
}

/// Episode-time buckets of the return baseline; the per-step cost makes
/// returns depend on remaining time as much as on the state.
pub const TIME_BUCKETS: usize = 10;

/// Baseline key for a state cell visited at step `t`.
pub fn baseline_key(cell: usize, t: usize, max_steps: usize) -> usize {
    cell * TIME_BUCKETS + (t * TIME_BUCKETS / max_steps.max(1)).min(TIME_BUCKETS - 1)
}

/// Moving-average return per baseline key.
#[derive(Debug, Clone)]
pub struct ReturnBaseline {
    values: Vec<f64>,
    seen: Vec<bool>,
    rate: f64,
}

impl ReturnBaseline {
    pub fn new(n_cells: usize, rate: f64) -> Self {
        Self {
            values: vec![0.0; n_cells],
            seen: vec![false; n_cells],
            rate,
        }
    }

    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn update(&mut self, cell: usize, ret: f64) {
        if self.seen[cell] {
            self.values[cell] += self.rate * (ret - self.values[cell]);
        } else {
            self.values[cell] = ret;
            self.seen[cell] = true;
        }
    }
}

fn rewards_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Frozen per-step advantages `(G_t − b(cell_t)) / scale`, then folds the
/// batch returns into the baseline.
pub fn compute_advantages(
    episodes: &[LearnerEpisode],
    baseline: &mut ReturnBaseline,
    normalize: bool,
) -> Vec<Vec<f64>> {
    let mut adv: Vec<Vec<f64>> = episodes
        .iter()
        .map(|e| e.steps.iter().map(|s| s.ret - baseline.value(s.cell)).collect())
        .collect();
    if normalize {
        let n: usize = adv.iter().map(Vec::len).sum();
        if n > 1 {
            let mean = adv.iter().flatten().sum::<f64>() / n as f64;
            let var = adv.iter().flatten().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            if sd > 1e-12 {
                adv.iter_mut().flatten().for_each(|a| *a /= sd);
            }
        }
    }
    for e in episodes {
        for s in &e.steps {
            baseline.update(s.cell, s.ret);
        }
    }
    adv
}

/// `(1/N) Σ_e w_e Σ_t A_{e,t} ln π_θ(a_t | s_t)` with frozen weights and advantages.
pub fn surrogate(policy: &SoftmaxPolicy, episodes: &[LearnerEpisode], advantages: &[Vec<f64>]) -> f64 {
    let n = episodes.len().max(1) as f64;
    episodes
        .iter()
        .zip(advantages)
        .map(|(e, adv)| {
            e.weight
                * e.steps
                    .iter()
                    .zip(adv)
                    .map(|(s, a)| a * policy.log_prob(&s.features, s.action))
                    .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Analytic gradient of [`surrogate`].
pub fn batch_gradient(policy: &SoftmaxPolicy, episodes: &[LearnerEpisode], advantages: &[Vec<f64>]) -> Vec<f64> {
    let n = episodes.len().max(1) as f64;
    let mut g = vec![0.0; policy.theta.len()];
    for (e, adv) in episodes.iter().zip(advantages) {
        for (s, a) in e.steps.iter().zip(adv) {
            let scale = e.weight * a / n;
            if scale == 0.0 {
                continue;
            }
            for (i, v) in policy.score(&s.features, s.action) {
                g[i] += scale * v;
            }
        }
    }
    g
}

/// One progress row per update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub update: usize,
    pub mean_return: f64,
    pub mean_weight: f64,
    /// Mean KL to the active baselines (meta training only).
    pub kl_to_baselines: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "update,mean_return,mean_weight,kl_to_baselines")?;
        for r in &self.rows {
            let kl = r.kl_to_baselines.map(|k| k.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{}", r.update, r.mean_return, r.mean_weight, kl)?;
        }
        Ok(())
    }
}

fn social_episodes(policy: &SoftmaxPolicy, scenario: &Scenario, ep: &EpisodeRecord, gamma: f64) -> Vec<LearnerEpisode> {
    let n_soc = ep.betas.len();
    (0..n_soc)
        .filter_map(|j| {
            let mut feats = Vec::new();
            let mut rewards = Vec::new();
            for st in &ep.steps {
                if let Some(a) = st.social_actions[j] {
                    let veh = &st.state.vehicles[j + 1];
                    let x = policy.feature_map.featurize_vehicle(veh).expect("social feature map");
                    let cell = baseline_key(
                        policy.feature_map.cell(scenario, &st.state, j + 1),
                        st.state.step,
                        scenario.config.max_steps,
                    );
                    feats.push((x, a, cell));
                    rewards.push(st.social_rewards[j]);
                }
            }
            if feats.is_empty() {
                return None;
            }
            let rets = rewards_to_go(&rewards, gamma);
            Some(LearnerEpisode {
                weight: 1.0,
                steps: feats
                    .into_iter()
                    .zip(rets)
                    .map(|((features, action, cell), ret)| LearnerStep { features, action, cell, ret })
                    .collect(),
            })
        })
        .collect()
}

fn ego_episode(policy: &SoftmaxPolicy, scenario: &Scenario, ep: &EpisodeRecord, cfg: &TrainConfig, weight: f64) -> LearnerEpisode {
    let gamma = cfg.gamma;
    let phi = |s: f64| cfg.progress_shaping * (s / scenario.ego_goal).min(1.0);
    let rewards: Vec<f64> = ep
        .steps
        .iter()
        .enumerate()
        .map(|(t, st)| {
            let next = ep.steps.get(t + 1).map_or(&ep.final_state, |n| &n.state);
            st.ego_reward + gamma * phi(next.ego().s) - phi(st.state.ego().s)
        })
        .collect();
    let rets = rewards_to_go(&rewards, gamma);
    LearnerEpisode {
        weight,
        steps: ep
            .steps
            .iter()
            .zip(rets)
            .map(|(st, ret)| LearnerStep {
                features: policy.features(scenario, &st.state, 0),
                action: st.ego_action,
                cell: baseline_key(
                    policy.feature_map.cell(scenario, &st.state, 0),
                    st.state.step,
                    scenario.config.max_steps,
                ),
                ret,
            })
            .collect(),
    }
}

fn apply(theta: &mut [f64], grad: &[f64], step: f64, max_norm: Option<f64>) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let step = match max_norm {
        Some(m) if norm > m => step * m / norm,
        _ => step,
    };
    for (t, g) in theta.iter_mut().zip(grad) {
        *t += step * g;
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Default feature map for social baselines.
pub fn social_feature_map(scenario: &Scenario) -> FeatureMap {
    FeatureMap::Social(SocialFeatures::new(scenario.n_actions()))
}

/// Default feature map for the β-conditioned meta-policy.
pub fn meta_feature_map(scenario: &Scenario, baselines: &BaselineSet) -> FeatureMap {
    FeatureMap::MetaSocial(MetaFeatures::new(
        SocialFeatures::new(scenario.n_actions()),
        baselines.betas.clone(),
        baselines.radius,
    ))
}

/// REINFORCE on the social objective with every social vehicle at `beta_bar`.
/// The ego holds still at its start so that episodes run the full horizon.
pub fn train_social(scenario: &Scenario, beta_bar: f64, cfg: &TrainConfig) -> Result<(SoftmaxPolicy, TrainLog)> {
    cfg.validate()?;
    let mut policy = SoftmaxPolicy::zeros(social_feature_map(scenario));
    let mut baseline = ReturnBaseline::new(policy.feature_map.n_cells() * TIME_BUCKETS, cfg.baseline_rate);
    let stream = SeedStream::new(cfg.seed, "social").child_indexed("beta", beta_bar.to_bits());
    let betas = vec![beta_bar; scenario.config.n_social];
    let hold = FixedAction(scenario.brake_action());
    let mut log = TrainLog::default();
    for update in 0..cfg.updates {
        let current = &policy;
        let records: Vec<EpisodeRecord> = (0..cfg.batch)
            .into_par_iter()
            .map(|e| {
                let seed = stream.seed((update * cfg.batch + e) as u64);
                rollout(scenario, &hold, current, &betas, seed, cfg.gamma)
            })
            .collect::<Result<_>>()?;
        let episodes: Vec<LearnerEpisode> = records
            .iter()
            .flat_map(|r| social_episodes(current, scenario, r, cfg.gamma))
            .collect();
        let adv = compute_advantages(&episodes, &mut baseline, cfg.normalize_advantages);
        let grad = batch_gradient(&policy, &episodes, &adv);
        apply(&mut policy.theta, &grad, cfg.learning_rate, cfg.max_grad_norm);
        log.rows.push(TrainLogRow {
            update,
            mean_return: mean(episodes.iter().filter_map(|e| e.steps.first().map(|s| s.ret))),
            mean_weight: 1.0,
            kl_to_baselines: None,
        });
    }
    Ok((policy, log))
}

/// Trains one baseline per preference in `betas`.
pub fn train_baselines(scenario: &Scenario, betas: &[f64], radius: f64, cfg: &TrainConfig) -> Result<(BaselineSet, Vec<TrainLog>)> {
    let mut policies = Vec::with_capacity(betas.len());
    let mut logs = Vec::with_capacity(betas.len());
    for &b in betas {
        let (p, log) = train_social(scenario, b, cfg)?;
        policies.push(p);
        logs.push(log);
    }
    Ok((BaselineSet::new(betas.to_vec(), policies, radius)?, logs))
}

/// How β is chosen for each meta-training update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetaBetaSchedule {
    Uniform { lo: f64, hi: f64 },
    Pinned(f64),
}

/// Gradient (w.r.t. the meta parameters) of
/// `mean_s Σ_{β̄ near β} KL(π*_β̄(·|s) ‖ π_meta(·|s, β))`, and that loss.
/// Every state must carry β. Returns zeros when no baseline is in range.
pub fn regularization_gradient(meta: &SoftmaxPolicy, baselines: &BaselineSet, states: &[Vehicle]) -> Result<(Vec<f64>, f64)> {
    let mut g = vec![0.0; meta.theta.len()];
    if states.is_empty() {
        return Ok((g, 0.0));
    }
    let n = states.len() as f64;
    let mut loss = 0.0;
    for v in states {
        let beta = v.beta.unwrap_or(0.0);
        let near = nearest_indices(beta, &baselines.betas, baselines.radius);
        if near.is_empty() {
            continue;
        }
        let x = meta.feature_map.featurize_vehicle(v)?;
        let q = meta.action_probs(&x);
        for i in near {
            let p = baselines.policies[i].vehicle_probs(v)?;
            loss += kl_probs(&p, &q) / n;
            // ∇ KL(p ‖ q_θ) = Σ_a (q_a − p_a) φ(s, a)
            for a in 0..q.len() {
                let c = (q[a] - p[a]) / n;
                for &(idx, val) in x.action(a) {
                    g[idx] += c * val;
                }
            }
        }
    }
    Ok((g, loss))
}

/// Meta-policy training: each update draws β from `schedule`, takes a
/// social policy-gradient step at that β and subtracts `reg_weight` times the
/// gradient of the KL to the nearby baselines over states replayed from the
/// same batch. The combined step is divided by `max(1, reg_weight)` so large
/// weights stay stable.
pub fn train_meta(
    scenario: &Scenario,
    baselines: &BaselineSet,
    schedule: MetaBetaSchedule,
    cfg: &TrainConfig,
) -> Result<(SoftmaxPolicy, TrainLog)> {
    cfg.validate()?;
    if let MetaBetaSchedule::Uniform { lo, hi } = schedule {
        if !(lo < hi) {
            return Err(Error::InvalidConfig("meta β range must satisfy lo < hi".into()));
        }
    }
    let mut meta = SoftmaxPolicy::zeros(meta_feature_map(scenario, baselines));
    let mut baseline = ReturnBaseline::new(meta.feature_map.n_cells() * TIME_BUCKETS, cfg.baseline_rate);
    let stream = SeedStream::new(cfg.seed, "meta");
    let hold = FixedAction(scenario.brake_action());
    let step_scale = cfg.learning_rate / cfg.reg_weight.max(1.0);
    let mut log = TrainLog::default();
    for update in 0..cfg.updates {
        let beta = match schedule {
            MetaBetaSchedule::Pinned(b) => b,
            MetaBetaSchedule::Uniform { lo, hi } => {
                ScenarioDistribution::Uniform { lo, hi }.sample(&mut stream.child("beta").rng(update as u64))
            }
        };
        let betas = vec![beta; scenario.config.n_social];
        let current = &meta;
        let records: Vec<EpisodeRecord> = (0..cfg.batch)
            .into_par_iter()
            .map(|e| {
                let seed = stream.child("episode").seed((update * cfg.batch + e) as u64);
                rollout(scenario, &hold, current, &betas, seed, cfg.gamma)
            })
            .collect::<Result<_>>()?;
        let episodes: Vec<LearnerEpisode> = records
            .iter()
            .flat_map(|r| social_episodes(current, scenario, r, cfg.gamma))
            .collect();
        let adv = compute_advantages(&episodes, &mut baseline, cfg.normalize_advantages);
        let mut grad = batch_gradient(&meta, &episodes, &adv);

        let replay = replay_states(&records, cfg.reg_batch);
        let (reg, kl) = regularization_gradient(&meta, baselines, &replay)?;
        for (g, r) in grad.iter_mut().zip(&reg) {
            *g -= cfg.reg_weight * r;
        }
        apply(&mut meta.theta, &grad, step_scale, cfg.max_grad_norm);
        log.rows.push(TrainLogRow {
            update,
            mean_return: mean(episodes.iter().filter_map(|e| e.steps.first().map(|s| s.ret))),
            mean_weight: 1.0,
            kl_to_baselines: Some(kl),
        });
    }
    Ok((meta, log))
}

/// Up to `limit` social-vehicle snapshots, evenly strided over the batch.
pub fn replay_states(records: &[EpisodeRecord], limit: usize) -> Vec<Vehicle> {
    let all: Vec<Vehicle> = records
        .iter()
        .flat_map(|r| {
            r.steps.iter().flat_map(|s| {
                s.state
                    .socials()
                    .filter(|(_, v)| !v.finished)
                    .map(|(_, v)| *v)
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    if all.len() <= limit {
        return all;
    }
    let stride = all.len() as f64 / limit as f64;
    (0..limit).map(|i| all[(i as f64 * stride) as usize]).collect()
}

/// Social-vehicle states visited by `policy` with all socials at `beta`.
pub fn collect_social_states(
    scenario: &Scenario,
    policy: &SoftmaxPolicy,
    beta: f64,
    episodes: usize,
    seed: u64,
    limit: usize,
) -> Result<Vec<Vehicle>> {
    let stream = SeedStream::new(seed, "eval-states");
    let betas = vec![beta; scenario.config.n_social];
    let hold = FixedAction(scenario.brake_action());
    let records: Vec<EpisodeRecord> = (0..episodes)
        .into_par_iter()
        .map(|e| rollout(scenario, &hold, policy, &betas, stream.seed(e as u64), 0.99))
        .collect::<Result<_>>()?;
    Ok(replay_states(&records, limit))
}

/// KL from the baseline at `beta_bar` to the meta-policy evaluated at `beta_bar`.
pub fn meta_kl_to_baseline(meta: &SoftmaxPolicy, baseline: &SoftmaxPolicy, states: &[Vehicle], beta_bar: f64) -> Result<f64> {
    let at: Vec<Vehicle> = states
        .iter()
        .map(|v| Vehicle { beta: Some(beta_bar), ..*v })
        .collect();
    kl_divergence(baseline, meta, &at)
}

/// Options for [`train_ego`].
#[derive(Debug, Clone, Copy)]
pub struct EgoTraining<'a> {
    pub p_training: &'a ScenarioDistribution,
    pub p_naturalistic: &'a ScenarioDistribution,
    pub use_is: bool,
}

/// Draws the social preferences for one episode and their training weight.
pub fn draw_betas(
    scenario: &Scenario,
    opts: &EgoTraining<'_>,
    cap: WeightCap,
    per_vehicle: bool,
    rng: &mut crate::rng::SimRng,
) -> Result<(Vec<f64>, f64)> {
    let n = scenario.config.n_social;
    let betas: Vec<f64> = if per_vehicle {
        (0..n).map(|_| opts.p_training.sample(rng)).collect()
    } else {
        vec![opts.p_training.sample(rng); n]
    };
    if !opts.use_is {
        return Ok((betas, 1.0));
    }
    let w = if per_vehicle {
        let mut w = 1.0;
        for b in &betas {
            w *= likelihood_ratio(opts.p_naturalistic, opts.p_training, *b, WeightCap::Unbounded)?;
        }
        cap.apply(w)
    } else {
        match betas.first() {
            Some(b) => likelihood_ratio(opts.p_naturalistic, opts.p_training, *b, cap)?,
            None => 1.0,
        }
    };
    Ok((betas, w))
}

/// Ego REINFORCE against the meta-policy with β drawn from `p_training`;
/// with `use_is` each episode's advantages are scaled by the capped ratio
/// `p_naturalistic(β) / p_training(β)`.
pub fn train_ego(
    scenario: &Scenario,
    meta: &SoftmaxPolicy,
    init: &SoftmaxPolicy,
    opts: EgoTraining<'_>,
    cfg: &TrainConfig,
) -> Result<(SoftmaxPolicy, TrainLog)> {
    cfg.validate()?;
    if !matches!(init.feature_map, FeatureMap::Ego(_)) {
        return Err(Error::Incompatible("ego training needs an ego feature map".into()));
    }
    let mut policy = init.clone();
    let mut baseline = ReturnBaseline::new(policy.feature_map.n_cells() * TIME_BUCKETS, cfg.baseline_rate);
    let stream = SeedStream::new(cfg.seed, "ego");
    let cap = WeightCap::Capped(cfg.weight_cap);
    let mut log = TrainLog::default();
    for update in 0..cfg.updates {
        let current = &policy;
        let episodes: Vec<(LearnerEpisode, f64)> = (0..cfg.batch)
            .into_par_iter()
            .map(|e| {
                let idx = (update * cfg.batch + e) as u64;
                let mut rng = stream.child("beta").rng(idx);
                let (betas, w) = draw_betas(scenario, &opts, cap, cfg.per_vehicle_beta, &mut rng)?;
                let rec = rollout(scenario, current, meta, &betas, stream.child("episode").seed(idx), cfg.gamma)?;
                Ok((ego_episode(current, scenario, &rec, cfg, w), rec.ego_return))
            })
            .collect::<Result<_>>()?;
        let (episodes, returns): (Vec<LearnerEpisode>, Vec<f64>) = episodes.into_iter().unzip();
        let adv = compute_advantages(&episodes, &mut baseline, cfg.normalize_advantages);
        let grad = batch_gradient(&policy, &episodes, &adv);
        apply(&mut policy.theta, &grad, cfg.learning_rate, cfg.max_grad_norm);
        log.rows.push(TrainLogRow {
            update,
            mean_return: mean(returns.iter().copied()),
            mean_weight: mean(episodes.iter().map(|e| e.weight)),
            kl_to_baselines: None,
        });
    }
    Ok((policy, log))
}

/// Fresh ego policy for `scenario`.
pub fn initial_ego(scenario: &Scenario) -> SoftmaxPolicy {
    SoftmaxPolicy::zeros(FeatureMap::Ego(crate::policies::EgoFeatures::new(scenario.n_actions())))
}

/// Mean social speed over `episodes` rollouts with every social at `beta`.
pub fn mean_social_speed(scenario: &Scenario, social: &dyn Driver, beta: f64, episodes: usize, seed: u64) -> Result<f64> {
    let stream = SeedStream::new(seed, "speed-probe");
    let betas = vec![beta; scenario.config.n_social];
    let hold = FixedAction(scenario.brake_action());
    let per_episode: Vec<(f64, usize)> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let rec = rollout(scenario, &hold, social, &betas, stream.seed(e as u64), 0.99)?;
            let mut sum = 0.0;
            let mut n = 0;
            for st in rec.steps.iter().skip(1).map(|s| &s.state).chain(std::iter::once(&rec.final_state)) {
                for (_, v) in st.socials().filter(|(_, v)| !v.finished) {
                    sum += v.v;
                    n += 1;
                }
            }
            Ok((sum, n))
        })
        .collect::<Result<_>>()?;
    let (s, n) = per_episode.iter().fold((0.0, 0), |(a, b), (s, n)| (a + s, b + n));
    Ok(if n == 0 { 0.0 } else { s / n as f64 })
}
