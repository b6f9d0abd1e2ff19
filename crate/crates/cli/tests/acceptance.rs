//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use tmerge_core::ce_eval::{ce_optimize, evaluate_is_with, CeConfig, EpisodeSummary};
use tmerge_core::data_fit::{default_beta_grid, estimate_all, generate_trajectories};
use tmerge_core::distributions::{quadrature_mass, ScenarioDistribution};
use tmerge_core::pipeline::{run_pipeline, train_social_stage, PipelineConfig, PipelineResult, SocialStage};
use tmerge_core::policies::{kl_divergence, SocialFeatures};
use tmerge_core::simulator::{Role, Vehicle};
use tmerge_core::training::{
    collect_social_states, initial_ego, mean_social_speed, meta_kl_to_baseline, train_ego, train_meta, EgoTraining,
    MetaBetaSchedule, TrainConfig,
};
use tmerge_core::{FeatureMap, Outcome, Scenario, SoftmaxPolicy};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn gaussian(mu: f64, sigma: f64) -> ScenarioDistribution {
    ScenarioDistribution::gaussian(mu, sigma).unwrap()
}

fn fails_below_zero(beta: f64, _seed: u64) -> tmerge_core::Result<EpisodeSummary> {
    Ok(if beta < 0.0 { Outcome::Collision } else { Outcome::Success }.into())
}

fn synthetic() -> &'static (PipelineConfig, Scenario, SocialStage) {
    static STAGE: OnceLock<(PipelineConfig, Scenario, SocialStage)> = OnceLock::new();
    STAGE.get_or_init(|| {
        let cfg = PipelineConfig::synthetic();
        let scenario = Scenario::new(cfg.scenario.clone()).unwrap();
        let social = train_social_stage(&cfg).unwrap();
        (cfg, scenario, social)
    })
}

fn tmerge(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_tmerge")).args(args).output().expect("spawn tmerge");
    assert!(
        out.status.success(),
        "tmerge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn workdir() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| tempfile::tempdir().unwrap()).path()
}

fn is_tail_estimate() -> Check {
    let truth = normal_cdf(-3.0);
    let start = Instant::now();
    let est: Vec<f64> = (0..10)
        .map(|s| evaluate_is_with(fails_below_zero, &gaussian(0.0, 0.5), &gaussian(1.5, 0.5), 5000, s).unwrap().failure.rate)
        .collect();
    let elapsed = start.elapsed();
    let m = median(est);
    let rel = (m - truth).abs() / truth;
    ensure(
        rel <= 0.2 && elapsed < Duration::from_secs(10),
        format!("median {m:.4e} vs {truth:.4e} (rel {rel:.3}), {:.2}s", elapsed.as_secs_f64()),
    )
}

fn proposals_agree() -> Check {
    let nat = gaussian(1.5, 0.5);
    let a = evaluate_is_with(fails_below_zero, &gaussian(0.0, 0.5), &nat, 5000, 31).unwrap();
    let b = evaluate_is_with(fails_below_zero, &gaussian(0.5, 0.75), &nat, 5000, 32).unwrap();
    let se = (a.failure.std_error(5000).powi(2) + b.failure.std_error(5000).powi(2)).sqrt();
    let gap = (a.failure.rate - b.failure.rate).abs();
    ensure(gap <= 3.0 * se, format!("{:.4e} vs {:.4e}, gap {gap:.2e} <= 3 x {se:.2e}", a.failure.rate, b.failure.rate))
}

fn ce_finds_minimum() -> Check {
    let cfg = CeConfig { mu0: 0.0, sigma: 0.5, seed: 0, ..CeConfig::default() };
    let start = Instant::now();
    let r = ce_optimize(|b, _| Ok((b - 2.0).abs()), &cfg).unwrap();
    let elapsed = start.elapsed();
    ensure(
        (1.9..=2.1).contains(&r.mu_star) && r.trace.len() <= 50 && r.converged && elapsed < Duration::from_secs(5),
        format!("mu* {:.4} after {} iterations, {:.2}s", r.mu_star, r.trace.len(), elapsed.as_secs_f64()),
    )
}

fn gradient_matches_finite_differences() -> Check {
    use rand::{Rng, SeedableRng};
    use tmerge_core::simulator::FixedAction;
    use tmerge_core::training::{batch_gradient, surrogate, LearnerEpisode, LearnerStep};
    use tmerge_core::rollout;

    let scenario = Scenario::new(Default::default()).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let points = 5;
    for _ in 0..points {
        let mut policy = initial_ego(&scenario);
        for t in policy.theta.iter_mut() {
            *t = 0.5 * (rng.random::<f64>() * 2.0 - 1.0);
        }
        let mut episodes = Vec::new();
        let mut adv = Vec::new();
        for e in 0..3 {
            let rec = rollout(&scenario, &policy, &FixedAction(2), &[1.0, 1.0], 300 + e, 0.99).unwrap();
            let steps: Vec<LearnerStep> = rec
                .steps
                .iter()
                .map(|s| LearnerStep { features: policy.features(&scenario, &s.state, 0), action: s.ego_action, cell: 0, ret: 0.0 })
                .collect();
            adv.push(steps.iter().map(|_| rng.random::<f64>() * 2.0 - 1.0).collect::<Vec<f64>>());
            episodes.push(LearnerEpisode { weight: 0.5 + rng.random::<f64>(), steps });
        }
        let g = batch_gradient(&policy, &episodes, &adv);
        let mut touched: Vec<usize> = episodes
            .iter()
            .flat_map(|e| e.steps.iter().flat_map(|s| s.features.entries.iter().map(|(i, _)| *i)))
            .collect();
        touched.sort_unstable();
        touched.dedup();
        let mut diff = 0.0;
        let mut norm = 0.0;
        for &i in &touched {
            let mut p = policy.clone();
            p.theta[i] += h;
            let up = surrogate(&p, &episodes, &adv);
            p.theta[i] -= 2.0 * h;
            let down = surrogate(&p, &episodes, &adv);
            let fd = (up - down) / (2.0 * h);
            diff += (g[i] - fd).powi(2);
            norm += fd * fd;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt());
    }
    ensure(worst < 1e-4, format!("{points} points, worst relative error {worst:.2e}"))
}

fn kl_regularizer() -> Check {
    let p = SoftmaxPolicy::zeros(FeatureMap::Social(SocialFeatures::new(2)));
    let mut q = p.clone();
    let v = Vehicle { role: Role::Social, s: 0.0, v: 3.5, beta: Some(0.0), finished: false };
    let x = q.feature_map.featurize_vehicle(&v).unwrap();
    let (i, f) = x.action(1)[0];
    q.theta[i] = 3f64.ln() / f;
    let kl = kl_divergence(&p, &q, &[v]).unwrap();
    let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    if (kl - oracle).abs() >= 1e-9 || (kl - 0.143_841_036_2).abs() >= 1e-9 {
        return Err(format!("two-point KL {kl:.10} vs {oracle:.10}"));
    }

    let (cfg, scenario, social) = synthetic();
    let mut kls = Vec::new();
    for (k, &beta) in social.baselines.betas.iter().enumerate() {
        let mcfg = TrainConfig { reg_weight: 1e4, updates: 2000, seed: 3, ..cfg.meta.clone() };
        let (meta, _) = train_meta(scenario, &social.baselines, MetaBetaSchedule::Pinned(beta), &mcfg).unwrap();
        let states = collect_social_states(scenario, &meta, beta, 64, 99, 2000).unwrap();
        kls.push(meta_kl_to_baseline(&meta, &social.baselines.policies[k], &states, beta).unwrap());
    }
    let worst = kls.iter().copied().fold(0.0, f64::max);
    ensure(
        worst < 0.01,
        format!("two-point KL {kl:.10}; pinned KL per baseline {:?}", kls.iter().map(|k| format!("{k:.4}")).collect::<Vec<_>>()),
    )
}

fn naturalistic_runs() -> &'static Vec<(u64, PipelineConfig, Result<PipelineResult, String>, Duration)> {
    static RUNS: OnceLock<Vec<(u64, PipelineConfig, Result<PipelineResult, String>, Duration)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..10u64)
            .map(|seed| {
                let dir = workdir().join(format!("naturalistic-{seed}"));
                fs::create_dir_all(&dir).unwrap();
                let cfg = tmerge_cli::config::load("naturalistic.preset", &dir, &[format!("seed={seed}")]).unwrap().config;
                let start = Instant::now();
                let result = run_pipeline(&cfg).map(|(_, r)| r).map_err(|e| e.to_string());
                (seed, cfg, result, start.elapsed())
            })
            .collect()
    })
}

fn mixture_components() -> Check {
    let (_, cfg, result, _) = &naturalistic_runs()[0];
    let result = result.as_ref().map_err(|e| format!("seed 0 pipeline failed: {e}"))?;
    let last = result.distributions.last().unwrap();
    let ScenarioDistribution::Mixture { components, weights } = last else {
        return Err(format!("final training distribution is {last}"));
    };
    let mu = result.mu_stars();
    let means_ok = components.len() == 3 && components.iter().zip(&mu).all(|(c, m)| c.0 == *m && c.1 == cfg.sigma);
    let weights_ok = weights.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-12);
    let masses: Vec<f64> = result.distributions.iter().map(quadrature_mass).collect();
    let mass_ok = masses.iter().all(|m| (m - 1.0).abs() < 1e-6);
    ensure(means_ok && weights_ok && mass_ok, format!("{last}; mu* {mu:?}; masses {masses:?}"))
}

fn importance_weights_neutral() -> Check {
    let (cfg, scenario, social) = synthetic();
    let p = &cfg.p_naturalistic;
    let tcfg = TrainConfig { batch: 16, updates: 10, seed: 13, ..cfg.ego.clone() };
    let on = EgoTraining { p_training: p, p_naturalistic: p, use_is: true };
    let off = EgoTraining { use_is: false, ..on };
    let (a, la) = train_ego(scenario, &social.meta, &initial_ego(scenario), on, &tcfg).unwrap();
    let (b, lb) = train_ego(scenario, &social.meta, &initial_ego(scenario), off, &tcfg).unwrap();
    let same = a.theta.iter().zip(&b.theta).all(|(x, y)| x.to_bits() == y.to_bits()) && la == lb;
    ensure(same && a != initial_ego(scenario), format!("{} parameters bit-identical: {same}", a.theta.len()))
}

fn pipeline_run_dir() -> &'static PathBuf {
    static RUN: OnceLock<PathBuf> = OnceLock::new();
    RUN.get_or_init(|| {
        let out = workdir().join("runs");
        let out_s = out.to_str().unwrap();
        for name in ["first", "second"] {
            tmerge(&["--config", "synthetic.preset", "--seed", "7", "--out", out_s, "--run-name", name, "pipeline"]);
        }
        out.join("first")
    })
}

fn manifest_core(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    let obj = v.as_object_mut().unwrap();
    for k in ["created", "stage_timings", "args"] {
        obj.remove(k);
    }
    v
}

fn reproducible_runs() -> Check {
    let first = pipeline_run_dir();
    let a = read_tree(first);
    let b = read_tree(&first.with_file_name("second"));
    if a.keys().ne(b.keys()) {
        return Err(format!("file sets differ: {:?} vs {:?}", a.keys(), b.keys()));
    }
    for (name, bytes) in &a {
        let same = if name == "manifest.json" {
            manifest_core(bytes) == manifest_core(&b[name])
        } else {
            *bytes == b[name]
        };
        if !same {
            return Err(format!("{name} differs"));
        }
    }
    ensure(a.len() > 5, format!("{} files identical", a.len()))
}

fn speeds_ordered() -> Check {
    let (_, scenario, social) = synthetic();
    let speeds: Vec<f64> = social
        .baselines
        .betas
        .iter()
        .zip(&social.baselines.policies)
        .map(|(b, p)| mean_social_speed(scenario, p, *b, 200, 7).unwrap())
        .collect();
    let ok = speeds.windows(2).all(|w| w[1] < w[0]);
    ensure(ok, format!("mean speeds {:?}", speeds.iter().map(|s| format!("{s:.2}")).collect::<Vec<_>>()))
}

fn success_trend() -> Check {
    let runs = naturalistic_runs();
    let total: Duration = runs.iter().map(|r| r.3).sum();
    let mut good = 0;
    let mut lines = Vec::new();
    for (seed, _, result, _) in runs {
        match result {
            Ok(r) => {
                let s: Vec<f64> = r.iterations.iter().map(|it| it.check.as_ref().unwrap().success.rate).collect();
                let nd = s.windows(2).all(|w| w[1] >= w[0]);
                good += usize::from(nd);
                lines.push(format!("seed {seed}: {s:?}"));
            }
            Err(e) => lines.push(format!("seed {seed}: {e}")),
        }
    }
    for l in &lines {
        println!("    {l}");
    }
    ensure(
        good >= 7 && total < Duration::from_secs(30 * 60),
        format!("{good}/10 seeds non-decreasing, {:.0}s total", total.as_secs_f64()),
    )
}

fn beta_recovery() -> Check {
    let (_, scenario, social) = synthetic();
    let grid = default_beta_grid();
    let mut errors = Vec::new();
    for beta in [-1.0, 0.0, 1.0, 2.0, 3.0] {
        let tr: Vec<_> = generate_trajectories(scenario, &social.meta, beta, 10, 5).unwrap().into_iter().take(20).collect();
        if tr.len() < 20 {
            return Err(format!("only {} trajectories at beta {beta}", tr.len()));
        }
        errors.extend(estimate_all(&tr, &social.meta, &grid).unwrap().iter().map(|e| (e.beta_hat - beta).abs()));
    }
    let n = errors.len();
    let m = median(errors);
    ensure(m <= 0.3, format!("median |beta_hat - beta| {m:.3} over {n} trajectories"))
}

fn benchmark_table() -> Check {
    let social = pipeline_run_dir().join("social");
    let out = workdir().join("bench");
    tmerge(&[
        "--config",
        "synthetic.preset",
        "--out",
        out.to_str().unwrap(),
        "--run-name",
        "bench",
        "benchmarks",
        "--variants",
        "GEP,GIS,NEP,CEIS",
        "--social",
        social.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out.join("bench/benchmarks.csv")).unwrap();
    let mut lines = text.lines();
    if lines.next() != Some("policy,training_distribution,success,collision,timeout") {
        return Err("bad header".into());
    }
    let rows: Vec<&str> = lines.collect();
    let labels: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    if labels != ["GEP", "GIS", "NEP", "CEIS"] {
        return Err(format!("rows {labels:?}"));
    }
    let mut worst = 0.0f64;
    for row in &rows {
        // The training distribution may contain quoted commas; the rates are the last three fields.
        let cells: Vec<&str> = row.rsplitn(4, ',').take(3).collect();
        for cell in cells {
            let (r, s) = cell.split_once(" ± ").ok_or_else(|| format!("cell {cell:?}"))?;
            let r: f64 = r.parse().map_err(|_| format!("cell {cell:?}"))?;
            let s: f64 = s.parse().map_err(|_| format!("cell {cell:?}"))?;
            worst = worst.max((s - (r * (1.0 - r)).sqrt()).abs());
        }
    }
    ensure(worst < 1e-5, format!("4 rows, worst |s - sqrt(r(1-r))| {worst:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("importance-sampled tail probability", is_tail_estimate),
        ("estimates agree across proposals", proposals_agree),
        ("cross-entropy minimum", ce_finds_minimum),
        ("policy gradient vs finite differences", gradient_matches_finite_differences),
        ("KL regularizer", kl_regularizer),
        ("mixture training distribution", mixture_components),
        ("importance weights neutral on naturalistic training", importance_weights_neutral),
        ("seeded runs reproduce", reproducible_runs),
        ("social speed ordered by preference", speeds_ordered),
        ("naturalistic success trend", success_trend),
        ("preference recovery", beta_recovery),
        ("benchmark table", benchmark_table),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} PASS  {name}: {d} [{secs:.1}s]", n + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {d} [{secs:.1}s]", n + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
