use std::fs;
use std::path::{Path, PathBuf};

use tmerge_core::ce_eval::{ce_optimize_policy, evaluate_is, CeConfig, EvalReport};
use tmerge_core::data_fit::{
    default_beta_grid, estimate_all, fit_naturalistic, ingest_trajectories, write_betas_csv,
};
use tmerge_core::distributions::{parse_literal, read_beta_column, Bandwidth};
use tmerge_core::pipeline::{
    read_baselines, run_ablation, run_benchmarks, run_pipeline_with, train_meta_stage, train_social_baselines,
    train_social_stage, write_baselines, PipelineConfig, SocialStage, Variant,
};
use tmerge_core::training::{initial_ego, train_ego, EgoTraining, TrainLog};
use tmerge_core::{Scenario, ScenarioDistribution, SoftmaxPolicy};

use crate::config::{self, LoadedConfig};
use crate::error::{CliError, Result};
use crate::run::{out_root, RunDir};
use crate::{Command, GlobalArgs, SocialSource};

struct Ctx {
    run: RunDir,
    cfg: PipelineConfig,
    sources: Vec<String>,
    inputs: Vec<(String, String)>,
}

impl Ctx {
    fn input(&mut self, role: &str, path: &Path) -> PathBuf {
        self.inputs.push((role.to_string(), path.display().to_string()));
        path.to_path_buf()
    }

    fn scenario(&self) -> Result<Scenario> {
        Ok(Scenario::new(self.cfg.scenario.clone())?)
    }
}

pub fn execute(g: &GlobalArgs, cmd: &Command, argv: Vec<String>) -> Result<PathBuf> {
    let run = RunDir::create(&out_root(g.out.as_deref()), cmd.name(), g.seed, g.run_name.as_deref())?;
    let mut overrides = g.overrides.clone();
    if let Some(s) = g.seed {
        overrides.push(format!("seed={s}"));
    }
    let LoadedConfig { config, sources } = match config::load(&g.config, &run.inputs_dir(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            let _ = fs::remove_dir_all(&run.path);
            return Err(e);
        }
    };
    let mut ctx = Ctx { run, cfg: config, sources, inputs: Vec::new() };
    if let Err(e) = dispatch(&mut ctx, cmd) {
        let _ = fs::remove_dir_all(&ctx.run.path);
        return Err(e);
    }
    let Ctx { run, cfg, sources, inputs } = ctx;
    run.finish(cmd.name(), argv, &cfg, sources, inputs)
}

fn dispatch(ctx: &mut Ctx, cmd: &Command) -> Result<()> {
    match cmd {
        Command::TrainSocial => train_social(ctx),
        Command::TrainMeta { baselines } => train_meta(ctx, baselines),
        Command::TrainEgo { meta, training, no_is, init, iteration } => {
            train_ego_cmd(ctx, meta, training.as_deref(), !*no_is, init.as_deref(), *iteration)
        }
        Command::CeOptimize { ego, meta, mu0 } => ce_optimize(ctx, ego, meta, *mu0),
        Command::Evaluate { ego, meta, proposal, samples } => evaluate(ctx, ego, meta, proposal.as_deref(), *samples),
        Command::Pipeline(social) => pipeline(ctx, social),
        Command::Benchmarks { social, variants } => benchmarks(ctx, social, variants),
        Command::Ablation { social, means, sigmas } => ablation(ctx, social, means, sigmas),
        Command::FitKde { betas, bandwidth } => fit_kde(ctx, betas, bandwidth),
        Command::EstimateBeta { trajectories, meta, bandwidth } => estimate_beta(ctx, trajectories, meta, bandwidth),
    }
}

fn log_csv(log: &TrainLog) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn load_policy(ctx: &mut Ctx, role: &str, path: &Path) -> Result<SoftmaxPolicy> {
    let path = ctx.input(role, path);
    Ok(SoftmaxPolicy::load(&path)?)
}

fn parse_bandwidth(text: &str) -> Result<Bandwidth> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(Bandwidth::Auto);
    }
    text.parse::<f64>()
        .ok()
        .filter(|b| *b > 0.0 && b.is_finite())
        .map(Bandwidth::Fixed)
        .ok_or_else(|| CliError::Config(format!("bandwidth `{text}` is neither `auto` nor a positive number")))
}

fn train_social(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg.clone();
    let (baselines, logs) = ctx.run.stage("social-training", || Ok(train_social_baselines(&cfg)?))?;
    let written = write_baselines(&ctx.run.path, &baselines, &logs)?;
    ctx.run.record("", written);
    println!("trained {} baselines at β̄ = {:?}", baselines.betas.len(), baselines.betas);
    Ok(())
}

fn train_meta(ctx: &mut Ctx, dir: &Path) -> Result<()> {
    let dir = ctx.input("baselines", dir);
    let baselines = read_baselines(&dir, ctx.cfg.baseline_radius)?;
    let cfg = ctx.cfg.clone();
    let (meta, log) = ctx.run.stage("meta-training", || Ok(train_meta_stage(&cfg, &baselines)?))?;
    let stage = SocialStage { baselines, meta, baseline_logs: Vec::new(), meta_log: log };
    let written = stage.write_to(&ctx.run.path)?;
    ctx.run.record("", written);
    if let Some(last) = stage.meta_log.rows.last() {
        println!("meta-policy trained; final KL to baselines {:.4}", last.kl_to_baselines.unwrap_or(f64::NAN));
    }
    Ok(())
}

fn train_ego_cmd(
    ctx: &mut Ctx,
    meta: &Path,
    training: Option<&str>,
    use_is: bool,
    init: Option<&Path>,
    iteration: usize,
) -> Result<()> {
    if iteration == 0 {
        return Err(CliError::Config("--iteration is 1-based".into()));
    }
    let scenario = ctx.scenario()?;
    let meta = load_policy(ctx, "meta", meta)?;
    let p_training = match training {
        Some(lit) => parse_literal(lit, None)?,
        None => ctx.cfg.p0.clone(),
    };
    let init = match init {
        Some(p) => load_policy(ctx, "init", p)?,
        None => initial_ego(&scenario),
    };
    let cfg = ctx.cfg.clone();
    let opts = EgoTraining { p_training: &p_training, p_naturalistic: &cfg.p_naturalistic, use_is };
    let (ego, log) =
        ctx.run.stage("ego-training", || Ok(train_ego(&scenario, &meta, &init, opts, &cfg.ego_config(iteration))?))?;
    ego.save(&ctx.run.path.join("ego.policy"))?;
    ctx.run.record("", ["ego.policy".to_string()]);
    ctx.run.write("ego_progress.csv", &log_csv(&log)?)?;
    println!("ego trained on {p_training} ({} updates, IS {})", log.rows.len(), if use_is { "on" } else { "off" });
    Ok(())
}

fn ce_optimize(ctx: &mut Ctx, ego: &Path, meta: &Path, mu0: Option<f64>) -> Result<()> {
    let scenario = ctx.scenario()?;
    let ego = load_policy(ctx, "ego", ego)?;
    let meta = load_policy(ctx, "meta", meta)?;
    let ce_cfg = CeConfig { mu0: mu0.unwrap_or(ctx.cfg.mu0), ..ctx.cfg.ce_config(1) };
    let gamma = ctx.cfg.ego.gamma;
    let result = ctx.run.stage("ce", || Ok(ce_optimize_policy(&scenario, &ego, &meta, gamma, &ce_cfg)?))?;
    let p_evaluation = ScenarioDistribution::gaussian(result.mu_star, result.sigma)?;
    let out = serde_json::json!({ "p_evaluation": p_evaluation.to_string(), "result": result });
    ctx.run.write("ce.json", &json_bytes(&out)?)?;
    println!(
        "μ* = {:.4} after {} iterations ({})",
        result.mu_star,
        result.trace.len(),
        if result.converged { "converged" } else { "iteration cap" }
    );
    Ok(())
}

fn summary_line(r: &EvalReport) -> String {
    format!(
        "failure {:.6} (success {:.4}, collision {:.4}, timeout {:.4}), ESS {:.1}",
        r.failure.rate, r.success.rate, r.collision.rate, r.timeout.rate, r.ess
    )
}

fn evaluate(ctx: &mut Ctx, ego: &Path, meta: &Path, proposal: Option<&str>, samples: Option<usize>) -> Result<()> {
    let scenario = ctx.scenario()?;
    let ego = load_policy(ctx, "ego", ego)?;
    let meta = load_policy(ctx, "meta", meta)?;
    let proposal = match proposal {
        Some(lit) => parse_literal(lit, None)?,
        None => ctx.cfg.p_naturalistic.clone(),
    };
    let n = samples.unwrap_or(ctx.cfg.n_samples);
    let cfg = ctx.cfg.clone();
    let report = ctx.run.stage("evaluation", || {
        Ok(evaluate_is(&scenario, &ego, &meta, &proposal, &cfg.p_naturalistic, n, cfg.comparison_seed())?)
    })?;
    ctx.run.write("report.json", &json_bytes(&report)?)?;
    let mut lines = Vec::new();
    report.write_episodes_jsonl(&mut lines)?;
    ctx.run.write("episodes.jsonl", &lines)?;
    println!("{}", summary_line(&report));
    Ok(())
}

fn social_stage(ctx: &mut Ctx, source: &SocialSource) -> Result<SocialStage> {
    match &source.social {
        Some(dir) => {
            let dir = ctx.input("social", dir);
            Ok(SocialStage::read_from(&dir, ctx.cfg.baseline_radius)?)
        }
        None => {
            let cfg = ctx.cfg.clone();
            let stage = ctx.run.stage("social-training", || Ok(train_social_stage(&cfg)?))?;
            let written = stage.write_to(&ctx.run.path.join("social"))?;
            ctx.run.record("social", written);
            Ok(stage)
        }
    }
}

fn pipeline(ctx: &mut Ctx, source: &SocialSource) -> Result<()> {
    let social = social_stage(ctx, source)?;
    let cfg = ctx.cfg.clone();
    let result = ctx.run.stage("pipeline", || Ok(run_pipeline_with(&cfg, &social)?))?;
    let written = result.write_to(&ctx.run.path.join("pipeline"))?;
    ctx.run.record("pipeline", written);
    for r in &result.iterations {
        println!("k = {}: μ* = {:.4}, {}", r.k, r.ce.mu_star, summary_line(&r.report));
    }
    Ok(())
}

fn benchmarks(ctx: &mut Ctx, source: &SocialSource, variants: &[String]) -> Result<()> {
    let variants = variants.iter().map(|v| v.parse::<Variant>()).collect::<Result<Vec<_>, _>>()?;
    let social = social_stage(ctx, source)?;
    let cfg = ctx.cfg.clone();
    let table = ctx.run.stage("benchmarks", || Ok(run_benchmarks(&cfg, &variants, &social)?))?;
    let written = table.write_to(&ctx.run.path)?;
    ctx.run.record("", written);
    print!("{}", fs::read_to_string(ctx.run.path.join("benchmarks.csv"))?);
    Ok(())
}

fn ablation(ctx: &mut Ctx, source: &SocialSource, means: &[f64], sigmas: &[f64]) -> Result<()> {
    let social = social_stage(ctx, source)?;
    let cfg = ctx.cfg.clone();
    let table = ctx.run.stage("ablation", || Ok(run_ablation(means, sigmas, &cfg, &social)?))?;
    let written = table.write_to(&ctx.run.path)?;
    ctx.run.record("", written);
    print!("{}", fs::read_to_string(ctx.run.path.join("ablation.csv"))?);
    Ok(())
}

fn fit_kde(ctx: &mut Ctx, betas: &Path, bandwidth: &str) -> Result<()> {
    let bandwidth = parse_bandwidth(bandwidth)?;
    let path = ctx.input("betas", betas);
    let values = read_beta_column(&path)?;
    let fit = ctx.run.stage("fit-kde", || Ok(fit_naturalistic(&values, bandwidth)?))?;
    ctx.run.write("naturalistic.json", &json_bytes(&fit.to_json())?)?;
    println!("{} values: mean {:.4}, std {:.4}; p0 candidate {}", values.len(), fit.mean, fit.std, fit.gaussian);
    Ok(())
}

fn estimate_beta(ctx: &mut Ctx, trajectories: &Path, meta: &Path, bandwidth: &str) -> Result<()> {
    let bandwidth = parse_bandwidth(bandwidth)?;
    let scenario = ctx.scenario()?;
    let meta = load_policy(ctx, "meta", meta)?;
    let path = ctx.input("trajectories", trajectories);
    let trajectories = ingest_trajectories(&path, scenario.n_actions())?;
    let estimates = ctx.run.stage("estimate-beta", || Ok(estimate_all(&trajectories, &meta, &default_beta_grid())?))?;
    let mut csv = Vec::new();
    write_betas_csv(&trajectories, &estimates, &mut csv)?;
    ctx.run.write("betas.csv", &csv)?;
    let betas: Vec<f64> = estimates.iter().map(|e| e.beta_hat).collect();
    let low = estimates.iter().filter(|e| e.low_confidence).count();
    println!("{} vehicles ({low} low confidence)", betas.len());
    if betas.len() >= 2 {
        let fit = fit_naturalistic(&betas, bandwidth)?;
        ctx.run.write("naturalistic.json", &json_bytes(&fit.to_json())?)?;
        println!("mean {:.4}, std {:.4}; p0 candidate {}", fit.mean, fit.std, fit.gaussian);
    }
    Ok(())
}
