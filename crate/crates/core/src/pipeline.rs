//! End-to-end training loop: social baselines and the meta-policy once, then
//! `K` rounds of ego training, CE proposal search, IS evaluation and mixture
//! augmentation. Also the variant benchmark and the (μ, σ) ablation sweep.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ce_eval::{ce_optimize_policy, evaluate_is, CeConfig, CeResult, EvalReport};
use crate::distributions::{make_gmm, MixtureWeights, ScenarioDistribution};
use crate::error::{Error, Result};
use crate::policies::{BaselineSet, SoftmaxPolicy};
use crate::rng::derive_seed;
use crate::simulator::{Scenario, ScenarioConfig};
use crate::training::{
    initial_ego, train_baselines, train_ego, train_meta, EgoTraining, MetaBetaSchedule, TrainConfig, TrainLog,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub scenario: ScenarioConfig,
    pub p_naturalistic: ScenarioDistribution,
    /// Training distribution of the first ego iteration.
    pub p0: ScenarioDistribution,
    /// Initial CE mean; later iterations start from the previous optimum.
    pub mu0: f64,
    /// Shared σ of the CE proposal and of every mixture component.
    pub sigma: f64,
    /// Baseline preferences B̄.
    pub baseline_betas: Vec<f64>,
    /// Radius within which a baseline regularizes the meta-policy.
    pub baseline_radius: f64,
    /// Evaluation episodes N_s.
    pub n_samples: usize,
    pub iterations: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub social: TrainConfig,
    pub meta: TrainConfig,
    pub ego: TrainConfig,
    /// Per-iteration ego update budgets; iteration `k` falls back to
    /// `ego.updates` when the list is shorter.
    #[serde(default)]
    pub ego_updates_per_iteration: Vec<usize>,
    pub ce: CeConfig,
    /// Initialize ego_k from ego_{k−1}.
    pub warm_start: bool,
    /// Episodes of the per-iteration naturalistic check (0 disables it).
    pub check_samples: usize,
    pub seed: u64,
}

impl PipelineConfig {
    /// Desk-scale defaults on the synthetic naturalistic distribution.
    pub fn synthetic() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            p_naturalistic: ScenarioDistribution::Gaussian { mu: 1.5, sigma: 0.5 },
            p0: ScenarioDistribution::Gaussian { mu: 0.5, sigma: 0.5 },
            mu0: 0.5,
            sigma: 0.5,
            baseline_betas: vec![-1.0, 0.0, 1.0, 2.0, 3.0],
            baseline_radius: 0.5,
            n_samples: 5000,
            iterations: 1,
            beta_min: -1.0,
            beta_max: 3.0,
            social: TrainConfig { batch: 16, updates: 300, learning_rate: 0.2, gamma: 0.9, ..TrainConfig::default() },
            meta: TrainConfig {
                batch: 8,
                updates: 600,
                learning_rate: 0.5,
                gamma: 0.9,
                reg_weight: 10.0,
                ..TrainConfig::default()
            },
            ego: TrainConfig {
                batch: 32,
                updates: 100,
                learning_rate: 0.1,
                gamma: 0.99,
                max_grad_norm: Some(5.0),
                ..TrainConfig::default()
            },
            ego_updates_per_iteration: Vec::new(),
            ce: CeConfig { mu0: 0.5, sigma: 0.5, ..CeConfig::default() },
            warm_start: true,
            check_samples: 2000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.iterations == 0 {
            return bad("iterations (K) must be >= 1".into());
        }
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1".into());
        }
        if !(self.beta_min < self.beta_max) {
            return bad(format!("beta_min {} must be < beta_max {}", self.beta_min, self.beta_max));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and > 0".into());
        }
        if !self.mu0.is_finite() {
            return bad("mu0 must be finite".into());
        }
        if self.baseline_betas.is_empty() {
            return bad("at least one baseline β is required".into());
        }
        self.p_naturalistic.validate()?;
        self.p0.validate()?;
        self.social.validate()?;
        self.meta.validate()?;
        self.ego.validate()?;
        self.ce_config(1).validate()?;
        Scenario::new(self.scenario.clone())?;
        Ok(())
    }

    fn ego_updates(&self, k: usize) -> usize {
        self.ego_updates_per_iteration.get(k - 1).copied().unwrap_or(self.ego.updates)
    }

    /// Ego training config of iteration `k` (1-based). Seeds depend on `k`
    /// only, so every variant trained "as iteration 1" sees the same episodes.
    pub fn ego_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            updates: self.ego_updates(k),
            seed: derive_seed(self.seed, "ego", k as u64),
            ..self.ego.clone()
        }
    }

    pub fn ce_config(&self, k: usize) -> CeConfig {
        CeConfig {
            sigma: self.sigma,
            seed: derive_seed(self.seed, "ce", k as u64),
            ..self.ce.clone()
        }
    }

    /// Seed of the proposal-weighted evaluation at iteration `k`.
    pub fn eval_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, "eval", k as u64)
    }

    /// Seed shared by every naturalistic comparison (benchmarks, ablation,
    /// per-iteration checks).
    pub fn comparison_seed(&self) -> u64 {
        derive_seed(self.seed, "eval-naturalistic", 0)
    }

    pub fn uniform_training(&self) -> ScenarioDistribution {
        ScenarioDistribution::Uniform { lo: self.beta_min, hi: self.beta_max }
    }
}

/// Social baselines and the meta-policy trained from them.
#[derive(Debug, Clone)]
pub struct SocialStage {
    pub baselines: BaselineSet,
    pub meta: SoftmaxPolicy,
    pub baseline_logs: Vec<TrainLog>,
    pub meta_log: TrainLog,
}

pub fn train_social_stage(cfg: &PipelineConfig) -> Result<SocialStage> {
    let (baselines, baseline_logs) = train_social_baselines(cfg)?;
    let (meta, meta_log) = train_meta_stage(cfg, &baselines)?;
    Ok(SocialStage { baselines, meta, baseline_logs, meta_log })
}

/// One baseline social policy per entry of `cfg.baseline_betas`.
pub fn train_social_baselines(cfg: &PipelineConfig) -> Result<(BaselineSet, Vec<TrainLog>)> {
    let scenario = Scenario::new(cfg.scenario.clone())?;
    let social = TrainConfig { seed: derive_seed(cfg.seed, "social", 0), ..cfg.social.clone() };
    train_baselines(&scenario, &cfg.baseline_betas, cfg.baseline_radius, &social)
        .map_err(|e| e.at_stage("social-training", 0))
}

/// Meta-policy over `[beta_min, beta_max]` regularized toward `baselines`.
pub fn train_meta_stage(cfg: &PipelineConfig, baselines: &BaselineSet) -> Result<(SoftmaxPolicy, TrainLog)> {
    let scenario = Scenario::new(cfg.scenario.clone())?;
    let meta_cfg = TrainConfig { seed: derive_seed(cfg.seed, "meta", 0), ..cfg.meta.clone() };
    let schedule = MetaBetaSchedule::Uniform { lo: cfg.beta_min, hi: cfg.beta_max };
    train_meta(&scenario, baselines, schedule, &meta_cfg).map_err(|e| e.at_stage("meta-training", 0))
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    pub p_training: ScenarioDistribution,
    pub ego: SoftmaxPolicy,
    pub train_log: TrainLog,
    pub ce: CeResult,
    pub p_evaluation: ScenarioDistribution,
    pub report: EvalReport,
    /// Same ego evaluated on the naturalistic distribution with shared seeds.
    pub check: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub iterations: Vec<IterationRecord>,
    /// `p_0 .. p_K`.
    pub distributions: Vec<ScenarioDistribution>,
}

impl PipelineResult {
    pub fn final_ego(&self) -> &SoftmaxPolicy {
        &self.iterations.last().expect("K >= 1").ego
    }

    pub fn mu_stars(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.ce.mu_star).collect()
    }

    pub fn trace(&self) -> PipelineTrace {
        PipelineTrace {
            mu_star: self.mu_stars(),
            distributions: self.distributions.iter().map(|d| d.to_string()).collect(),
            iterations: self
                .iterations
                .iter()
                .map(|r| IterationSummary {
                    k: r.k,
                    p_training: r.p_training.to_string(),
                    mu_star: r.ce.mu_star,
                    ce_iterations: r.ce.trace.len(),
                    ce_converged: r.ce.converged,
                    p_evaluation: r.p_evaluation.to_string(),
                    report: r.report.clone(),
                    check: r.check.clone(),
                    ce_trace: r.ce.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub k: usize,
    pub p_training: String,
    pub mu_star: f64,
    pub ce_iterations: usize,
    pub ce_converged: bool,
    pub p_evaluation: String,
    pub report: EvalReport,
    pub check: Option<EvalReport>,
    pub ce_trace: CeResult,
}

/// Contents of `pipeline_trace.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub mu_star: Vec<f64>,
    /// Literals of `p_0 .. p_K`.
    pub distributions: Vec<String>,
    pub iterations: Vec<IterationSummary>,
}

/// Runs every stage, training the social stage first.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(SocialStage, PipelineResult)> {
    cfg.validate()?;
    let social = train_social_stage(cfg)?;
    let result = run_pipeline_with(cfg, &social)?;
    Ok((social, result))
}

/// The `K` ego/CE/evaluation/augmentation rounds on a trained social stage.
pub fn run_pipeline_with(cfg: &PipelineConfig, social: &SocialStage) -> Result<PipelineResult> {
    cfg.validate()?;
    let scenario = Scenario::new(cfg.scenario.clone())?;
    let mut distributions = vec![cfg.p0.clone()];
    let mut iterations: Vec<IterationRecord> = Vec::with_capacity(cfg.iterations);
    let mut mu_prev = cfg.mu0;
    let mut mu_stars = Vec::with_capacity(cfg.iterations);
    for k in 1..=cfg.iterations {
        let p_training = distributions[k - 1].clone();
        let init = match iterations.last() {
            Some(prev) if cfg.warm_start => prev.ego.clone(),
            _ => initial_ego(&scenario),
        };
        let opts = EgoTraining { p_training: &p_training, p_naturalistic: &cfg.p_naturalistic, use_is: true };
        let (ego, train_log) = train_ego(&scenario, &social.meta, &init, opts, &cfg.ego_config(k))
            .map_err(|e| e.at_stage("ego-training", k))?;

        let ce_cfg = CeConfig { mu0: mu_prev, ..cfg.ce_config(k) };
        let ce = ce_optimize_policy(&scenario, &ego, &social.meta, cfg.ego.gamma, &ce_cfg)
            .map_err(|e| e.at_stage("ce", k))?;
        mu_prev = ce.mu_star;
        mu_stars.push(ce.mu_star);

        let p_evaluation = ScenarioDistribution::gaussian(ce.mu_star, cfg.sigma).map_err(|e| e.at_stage("ce", k))?;
        let report = evaluate_is(&scenario, &ego, &social.meta, &p_evaluation, &cfg.p_naturalistic, cfg.n_samples, cfg.eval_seed(k))
            .map_err(|e| e.at_stage("evaluation", k))?;
        let check = if cfg.check_samples > 0 {
            Some(
                evaluate_is(
                    &scenario,
                    &ego,
                    &social.meta,
                    &cfg.p_naturalistic,
                    &cfg.p_naturalistic,
                    cfg.check_samples,
                    cfg.comparison_seed(),
                )
                .map_err(|e| e.at_stage("evaluation", k))?,
            )
        } else {
            None
        };

        let p_k = make_gmm(&mu_stars, cfg.sigma, MixtureWeights::Equal).map_err(|e| e.at_stage("gmm", k))?;
        distributions.push(p_k);
        iterations.push(IterationRecord { k, p_training, ego, train_log, ce, p_evaluation, report, check });
    }
    Ok(PipelineResult { iterations, distributions })
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Writes `baseline_<i>.policy`, their training logs and `baselines.json`.
pub fn write_baselines(dir: &Path, baselines: &BaselineSet, logs: &[TrainLog]) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (i, p) in baselines.policies.iter().enumerate() {
        let name = format!("baseline_{i}.policy");
        p.save(&dir.join(&name))?;
        written.push(name);
        if let Some(log) = logs.get(i) {
            let name = format!("baseline_{i}_progress.csv");
            write_file(&dir.join(&name), |w| log.write_csv(w))?;
            written.push(name);
        }
    }
    write_json(&dir.join("baselines.json"), &baselines.betas)?;
    written.push("baselines.json".into());
    Ok(written)
}

/// Reads a directory written by [`write_baselines`].
pub fn read_baselines(dir: &Path, radius: f64) -> Result<BaselineSet> {
    let index = dir.join("baselines.json");
    let text = fs::read_to_string(&index).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(index.clone()),
        _ => Error::Io(e),
    })?;
    let betas: Vec<f64> = serde_json::from_str(&text)?;
    let policies = (0..betas.len())
        .map(|i| SoftmaxPolicy::load(&dir.join(format!("baseline_{i}.policy"))))
        .collect::<Result<Vec<_>>>()?;
    BaselineSet::new(betas, policies, radius)
}

impl SocialStage {
    /// Baselines, `meta.policy` and the training logs.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = write_baselines(dir, &self.baselines, &self.baseline_logs)?;
        self.meta.save(&dir.join("meta.policy"))?;
        written.push("meta.policy".into());
        write_file(&dir.join("meta_progress.csv"), |w| self.meta_log.write_csv(w))?;
        written.push("meta_progress.csv".into());
        Ok(written)
    }

    /// Loads a directory written by [`SocialStage::write_to`]; logs are not
    /// restored.
    pub fn read_from(dir: &Path, radius: f64) -> Result<Self> {
        Ok(Self {
            baselines: read_baselines(dir, radius)?,
            meta: SoftmaxPolicy::load(&dir.join("meta.policy"))?,
            baseline_logs: Vec::new(),
            meta_log: TrainLog::default(),
        })
    }
}

impl PipelineResult {
    /// Policies, logs, per-evaluation episode lines and `pipeline_trace.json`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for r in &self.iterations {
            let k = r.k;
            let name = format!("ego_{k}.policy");
            r.ego.save(&dir.join(&name))?;
            written.push(name);
            let name = format!("ego_{k}_progress.csv");
            write_file(&dir.join(&name), |w| r.train_log.write_csv(w))?;
            written.push(name);
            let name = format!("eval_{k}_episodes.jsonl");
            write_file(&dir.join(&name), |w| r.report.write_episodes_jsonl(w))?;
            written.push(name);
            if let Some(c) = &r.check {
                let name = format!("check_{k}_episodes.jsonl");
                write_file(&dir.join(&name), |w| c.write_episodes_jsonl(w))?;
                written.push(name);
            }
        }
        self.final_ego().save(&dir.join("ego_final.policy"))?;
        written.push("ego_final.policy".into());
        write_json(&dir.join("pipeline_trace.json"), &self.trace())?;
        written.push("pipeline_trace.json".into());
        Ok(written)
    }
}

/// Ego-training variants compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Uniform β, no weights.
    Gep,
    /// Uniform β, IS weights.
    Gis,
    /// Naturalistic β, no weights.
    Nep,
    /// Full CE-guided pipeline.
    Ceis,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Gep, Variant::Gis, Variant::Nep, Variant::Ceis];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Gep => "GEP",
            Variant::Gis => "GIS",
            Variant::Nep => "NEP",
            Variant::Ceis => "CEIS",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "GEP" => Ok(Variant::Gep),
            "GIS" => Ok(Variant::Gis),
            "NEP" => Ok(Variant::Nep),
            "CEIS" => Ok(Variant::Ceis),
            other => Err(Error::InvalidConfig(format!("unknown variant `{other}` (expected GEP, GIS, NEP or CEIS)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkRow {
    pub variant: Variant,
    pub training_distribution: ScenarioDistribution,
    pub ego: SoftmaxPolicy,
    pub report: EvalReport,
    pub pipeline: Option<PipelineResult>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", EvalReport::csv_header())?;
        for r in &self.rows {
            writeln!(w, "{}", r.report.csv_row(r.variant.label(), &r.training_distribution.to_string()))?;
        }
        Ok(())
    }

    /// CSV, per-variant policies, the JSON sidecar and, for CEIS, the
    /// pipeline artifacts under `ceis/`.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        write_file(&dir.join("benchmarks.csv"), |w| self.write_csv(w))?;
        written.push("benchmarks.csv".into());
        let sidecar: Vec<_> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "policy": r.variant.label(),
                    "training_distribution": r.training_distribution.to_string(),
                    "report": r.report,
                })
            })
            .collect();
        write_json(&dir.join("benchmarks.json"), &sidecar)?;
        written.push("benchmarks.json".into());
        for r in &self.rows {
            let name = format!("ego_{}.policy", r.variant.label().to_ascii_lowercase());
            r.ego.save(&dir.join(&name))?;
            written.push(name);
            if let Some(p) = &r.pipeline {
                for f in p.write_to(&dir.join("ceis"))? {
                    written.push(format!("ceis/{f}"));
                }
            }
        }
        Ok(written)
    }
}

/// Trains and evaluates the requested variants on a shared social stage.
/// Every variant is evaluated on `p_naturalistic` with the same seeds.
pub fn run_benchmarks(cfg: &PipelineConfig, variants: &[Variant], social: &SocialStage) -> Result<BenchmarkTable> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::InvalidConfig("no benchmark variants requested".into()));
    }
    let scenario = Scenario::new(cfg.scenario.clone())?;
    let uniform = cfg.uniform_training();
    let rows = variants
        .par_iter()
        .map(|&variant| {
            let (training, ego, pipeline) = match variant {
                Variant::Ceis => {
                    let res = run_pipeline_with(cfg, social)?;
                    let last = res.iterations.last().expect("K >= 1");
                    (last.p_training.clone(), last.ego.clone(), Some(res))
                }
                _ => {
                    let (p, use_is) = match variant {
                        Variant::Gep => (uniform.clone(), false),
                        Variant::Gis => (uniform.clone(), true),
                        _ => (cfg.p_naturalistic.clone(), false),
                    };
                    let opts = EgoTraining { p_training: &p, p_naturalistic: &cfg.p_naturalistic, use_is };
                    let (ego, _) = train_ego(&scenario, &social.meta, &initial_ego(&scenario), opts, &cfg.ego_config(1))
                        .map_err(|e| e.at_stage("ego-training", 1))?;
                    (p, ego, None)
                }
            };
            let report = evaluate_is(
                &scenario,
                &ego,
                &social.meta,
                &cfg.p_naturalistic,
                &cfg.p_naturalistic,
                cfg.n_samples,
                cfg.comparison_seed(),
            )
            .map_err(|e| e.at_stage("evaluation", 0))?;
            Ok(BenchmarkRow { variant, training_distribution: training, ego, report, pipeline })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchmarkTable { rows })
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub mean: f64,
    pub sigma: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub means: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Row-major over `sigmas` × `means`.
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cell(&self, mean: f64, sigma: f64) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.mean == mean && c.sigma == sigma)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "mean,sigma,success,collision,timeout")?;
        for c in &self.cells {
            let row = c.report.csv_row("", "");
            // Reuse the metric cells of the benchmark layout.
            let metrics = row.splitn(3, ',').nth(2).unwrap_or_default();
            writeln!(w, "{},{},{}", c.mean, c.sigma, metrics)?;
        }
        Ok(())
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        write_file(&dir.join("ablation.csv"), |w| self.write_csv(w))?;
        let sidecar: Vec<_> = self
            .cells
            .iter()
            .map(|c| serde_json::json!({ "mean": c.mean, "sigma": c.sigma, "report": c.report }))
            .collect();
        write_json(&dir.join("ablation.json"), &sidecar)?;
        Ok(vec!["ablation.csv".into(), "ablation.json".into()])
    }
}

pub const ABLATION_MEANS: [f64; 4] = [-0.5, 0.5, 1.5, 2.5];
pub const ABLATION_SIGMAS: [f64; 3] = [0.5, 0.75, 1.0];

/// IS-weighted ego training from `N(μ, σ²)` for every grid cell, without CE
/// or mixtures, each evaluated naturalistically.
pub fn run_ablation(means: &[f64], sigmas: &[f64], cfg: &PipelineConfig, social: &SocialStage) -> Result<AblationTable> {
    if means.is_empty() || sigmas.is_empty() {
        return Err(Error::InvalidConfig("empty ablation grid".into()));
    }
    cfg.validate()?;
    let scenario = Scenario::new(cfg.scenario.clone())?;
    let grid: Vec<(f64, f64)> = sigmas.iter().flat_map(|&s| means.iter().map(move |&m| (m, s))).collect();
    let cells = grid
        .par_iter()
        .map(|&(mean, sigma)| {
            let p = ScenarioDistribution::gaussian(mean, sigma)?;
            let opts = EgoTraining { p_training: &p, p_naturalistic: &cfg.p_naturalistic, use_is: true };
            let (ego, _) = train_ego(&scenario, &social.meta, &initial_ego(&scenario), opts, &cfg.ego_config(1))
                .map_err(|e| e.at_stage("ego-training", 1))?;
            let report = evaluate_is(
                &scenario,
                &ego,
                &social.meta,
                &cfg.p_naturalistic,
                &cfg.p_naturalistic,
                cfg.n_samples,
                cfg.comparison_seed(),
            )
            .map_err(|e| e.at_stage("evaluation", 0))?;
            Ok(AblationCell { mean, sigma, report })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationTable { means: means.to_vec(), sigmas: sigmas.to_vec(), cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Tiny budgets: exercises wiring, not learning.
    fn tiny() -> PipelineConfig {
        let mut c = PipelineConfig::synthetic();
        c.social.updates = 2;
        c.social.batch = 2;
        c.meta.updates = 2;
        c.meta.batch = 2;
        c.ego.updates = 2;
        c.ego.batch = 4;
        c.ce.n_ce = 20;
        c.ce.max_iterations = 3;
        c.n_samples = 30;
        c.check_samples = 10;
        c
    }

    #[test]
    fn mixture_trace_has_equal_weights() {
        let cfg = PipelineConfig { iterations: 3, ..tiny() };
        let (_, res) = run_pipeline(&cfg).unwrap();
        assert_eq!(res.distributions.len(), 4);
        for (k, d) in res.distributions.iter().enumerate().skip(1) {
            let ScenarioDistribution::Mixture { components, weights } = d else { panic!("p_{k} is not a mixture") };
            let mus: Vec<f64> = components.iter().map(|c| c.0).collect();
            assert_eq!(mus, res.mu_stars()[..k]);
            assert!(weights.iter().all(|w| *w == 1.0 / k as f64));
            assert!(components.iter().all(|c| c.1 == cfg.sigma));
        }
    }

    #[test]
    fn warm_start_with_zero_budget_keeps_policy() {
        let cfg = PipelineConfig { iterations: 2, ego_updates_per_iteration: vec![2, 0], ..tiny() };
        let (_, res) = run_pipeline(&cfg).unwrap();
        assert_eq!(res.iterations[1].ego, res.iterations[0].ego);
        let cold = PipelineConfig { warm_start: false, ..cfg };
        let (_, res) = run_pipeline(&cold).unwrap();
        assert_eq!(res.iterations[1].ego, initial_ego(&Scenario::new(cold.scenario.clone()).unwrap()));
    }

    #[test]
    fn stage_errors_carry_stage_and_iteration() {
        let e = Error::SupportViolation { beta: 4.0 }.at_stage("evaluation", 2);
        assert!(e.to_string().starts_with("stage `evaluation` failed at iteration 2"));
        assert_eq!(e.category(), crate::error::ErrorCategory::Support);
        let broken = PipelineConfig { iterations: 0, ..tiny() };
        assert!(matches!(run_pipeline(&broken), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn ablation_grid_and_benchmark_pairing() {
        let cfg = tiny();
        let social = train_social_stage(&cfg).unwrap();
        let err = run_ablation(&[], &ABLATION_SIGMAS, &cfg, &social).unwrap_err();
        assert!(err.to_string().contains("empty ablation grid"));
        let grid = run_ablation(&ABLATION_MEANS, &ABLATION_SIGMAS, &cfg, &social).unwrap();
        assert_eq!(grid.cells.len(), 12);
        let bench = run_benchmarks(&cfg, &[Variant::Ceis], &social).unwrap();
        let ceis = &bench.rows[0];
        assert_eq!(ceis.training_distribution, cfg.p0);
        let cell = grid.cell(0.5, 0.5).unwrap();
        assert_eq!(cell.report, ceis.report);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("gep".parse::<Variant>().unwrap(), Variant::Gep);
        assert_eq!(" CEIS ".parse::<Variant>().unwrap(), Variant::Ceis);
        assert!("XYZ".parse::<Variant>().is_err());
    }
}
