//! Recorded-trajectory ingestion, per-vehicle β estimation under the
//! meta-policy, and the naturalistic density fit.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{fit_kde, sample_moments, Bandwidth, ScenarioDistribution};
use crate::error::{Error, Result};
use crate::policies::SoftmaxPolicy;
use crate::rng::SeedStream;
use crate::simulator::{rollout, FixedAction, Role, Scenario, Vehicle};

/// One recorded vehicle: `(state, action index)` pairs in step order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle_id: String,
    pub source: String,
    pub steps: Vec<(Vehicle, usize)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

const COLUMNS: [&str; 5] = ["vehicle_id", "step", "s", "v", "action_index"];

/// Reads `vehicle_id,step,s,v,action_index` rows into one trajectory per
/// vehicle, ordered by first appearance and sorted by step.
pub fn ingest_trajectories(path: &Path, n_actions: usize) -> Result<Vec<Trajectory>> {
    let file = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing column `{name}` (expected {})", COLUMNS.join(","))))
    };
    let idx = [col(COLUMNS[0])?, col(COLUMNS[1])?, col(COLUMNS[2])?, col(COLUMNS[3])?, col(COLUMNS[4])?];

    let source = path.display().to_string();
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(u64, Vehicle, usize)>> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| parse_err(line, format!("`{}` is not a number in column {}", field(i), COLUMNS[i])))
        };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty vehicle_id".into()));
        }
        let step = field(1)
            .parse::<u64>()
            .map_err(|_| parse_err(line, format!("`{}` is not a step index", field(1))))?;
        let s = num(2)?;
        let v = num(3)?;
        if v < 0.0 {
            return Err(parse_err(line, format!("negative speed {v}")));
        }
        let action = field(4)
            .parse::<usize>()
            .map_err(|_| parse_err(line, format!("`{}` is not an action index", field(4))))?;
        if action >= n_actions {
            return Err(parse_err(line, Error::ActionOutOfRange { index: action, len: n_actions }.to_string()));
        }
        let vehicle = Vehicle { role: Role::Social, s, v, beta: None, finished: false };
        rows.entry(id.clone())
            .or_insert_with(|| {
                order.push(id.clone());
                Vec::new()
            })
            .push((step, vehicle, action));
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let mut r = rows.remove(&id).unwrap_or_default();
            r.sort_by_key(|x| x.0);
            Trajectory {
                vehicle_id: id,
                source: source.clone(),
                steps: r.into_iter().map(|(_, v, a)| (v, a)).collect(),
            }
        })
        .collect())
}

/// Writes trajectories in the ingestion format.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(COLUMNS).map_err(csv_io)?;
    for t in trajectories {
        for (step, (v, a)) in t.steps.iter().enumerate() {
            out.write_record([t.vehicle_id.clone(), step.to_string(), v.s.to_string(), v.v.to_string(), a.to_string()])
                .map_err(csv_io)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `−1.5, −1.4, …, 3.5`.
pub fn default_beta_grid() -> Vec<f64> {
    (0..=50).map(|i| -1.5 + i as f64 / 10.0).collect()
}

/// Likelihood spread below which an estimate is flagged.
pub const LOW_CONFIDENCE_NATS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta_hat: f64,
    /// `(β, Σ_t ln π(a_t | s_t; β))` over the grid.
    pub curve: Vec<(f64, f64)>,
    /// Max minus min of the curve.
    pub spread: f64,
    pub low_confidence: bool,
}

/// Grid argmax of the trajectory log-likelihood under the meta-policy; ties
/// go to the grid point nearest the grid median.
pub fn estimate_beta(traj: &Trajectory, meta: &SoftmaxPolicy, grid: &[f64]) -> Result<BetaEstimate> {
    if traj.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if grid.is_empty() {
        return Err(Error::Empty("β grid"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidConfig("β grid must be strictly increasing".into()));
    }
    let curve: Vec<(f64, f64)> = grid
        .iter()
        .map(|&b| {
            let mut ll = 0.0;
            for (v, a) in &traj.steps {
                let x = meta.feature_map.featurize_vehicle(&Vehicle { beta: Some(b), ..*v })?;
                ll += meta.log_prob(&x, *a);
            }
            Ok((b, ll))
        })
        .collect::<Result<_>>()?;
    let max = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let min = curve.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let n = grid.len();
    let median = if n % 2 == 1 { grid[n / 2] } else { 0.5 * (grid[n / 2 - 1] + grid[n / 2]) };
    let tol = 1e-12 * max.abs().max(1.0);
    let beta_hat = curve
        .iter()
        .filter(|c| c.1 >= max - tol)
        .map(|c| c.0)
        .min_by(|a, b| (a - median).abs().total_cmp(&(b - median).abs()))
        .expect("non-empty grid");
    let spread = max - min;
    Ok(BetaEstimate { beta_hat, curve, spread, low_confidence: spread < LOW_CONFIDENCE_NATS })
}

/// [`estimate_beta`] for every trajectory, in input order.
pub fn estimate_all(trajectories: &[Trajectory], meta: &SoftmaxPolicy, grid: &[f64]) -> Result<Vec<BetaEstimate>> {
    trajectories.par_iter().map(|t| estimate_beta(t, meta, grid)).collect()
}

pub fn write_betas_csv<W: Write>(trajectories: &[Trajectory], estimates: &[BetaEstimate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["vehicle_id", "beta_hat", "confidence"]).map_err(csv_io)?;
    for (t, e) in trajectories.iter().zip(estimates) {
        let conf = if e.low_confidence { "low" } else { "high" };
        out.write_record([t.vehicle_id.as_str(), &e.beta_hat.to_string(), conf]).map_err(csv_io)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalisticFit {
    pub kde: ScenarioDistribution,
    /// Moment-matched single Gaussian.
    pub gaussian: ScenarioDistribution,
    pub mean: f64,
    pub std: f64,
}

impl NaturalisticFit {
    /// Contents of `naturalistic.json`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "kde": self.kde.to_string(),
            "gaussian": self.gaussian.to_string(),
            "mean": self.mean,
            "std": self.std,
        })
    }
}

/// KDE of the estimates plus the best-fit Gaussian.
pub fn fit_naturalistic(betas: &[f64], bandwidth: Bandwidth) -> Result<NaturalisticFit> {
    let kde = fit_kde(betas, bandwidth)?;
    let (mean, std) = sample_moments(betas);
    let gaussian = ScenarioDistribution::gaussian(mean, std)?;
    Ok(NaturalisticFit { kde, gaussian, mean, std })
}

/// Social trajectories of `policy` with every social at `beta` (the ego
/// holds still). Each social vehicle of each episode is one trajectory.
pub fn generate_trajectories(
    scenario: &Scenario,
    policy: &SoftmaxPolicy,
    beta: f64,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let stream = SeedStream::new(seed, "trajectories").child_indexed("beta", beta.to_bits());
    let betas = vec![beta; scenario.config.n_social];
    let hold = FixedAction(scenario.brake_action());
    let per_episode: Vec<Vec<Trajectory>> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let rec = rollout(scenario, &hold, policy, &betas, stream.seed(e as u64), 0.99)?;
            Ok((0..betas.len())
                .map(|j| Trajectory {
                    vehicle_id: format!("b{beta}-e{e}-v{j}"),
                    source: "generated".into(),
                    steps: rec
                        .steps
                        .iter()
                        .filter_map(|s| {
                            s.social_actions[j].map(|a| (Vehicle { beta: None, ..s.state.vehicles[j + 1] }, a))
                        })
                        .collect(),
                })
                .filter(|t| !t.is_empty())
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_episode.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{FeatureMap, MetaFeatures, SocialFeatures};

    fn write_tmp(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    fn meta_map() -> FeatureMap {
        FeatureMap::MetaSocial(MetaFeatures::new(SocialFeatures::new(4), vec![-1.0, 0.0, 1.0, 2.0, 3.0], 0.5))
    }

    #[test]
    fn header_only_is_empty() {
        let f = write_tmp("vehicle_id,step,s,v,action_index\n");
        assert!(ingest_trajectories(f.path(), 4).unwrap().is_empty());
    }

    #[test]
    fn groups_by_vehicle_and_orders_steps() {
        let f = write_tmp("vehicle_id,step,s,v,action_index\na,1,2.0,5,3\nb,0,0,1,0\na,0,1.0,4,2\n");
        let t = ingest_trajectories(f.path(), 4).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].vehicle_id, "a");
        assert_eq!(t[0].steps.iter().map(|s| s.1).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(t[0].steps[0].0.v, 4.0);
        assert_eq!(t[1].len(), 1);
    }

    #[test]
    fn bad_rows_report_their_line() {
        let f = write_tmp("vehicle_id,step,s,v,action_index\na,0,1,1,0\na,1,1,1,9\n");
        let err = ingest_trajectories(f.path(), 4).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let f = write_tmp("vehicle_id,step,s,v,action_index\na,0,x,1,0\n");
        assert!(matches!(ingest_trajectories(f.path(), 4), Err(Error::Parse { line: 2, .. })));
        let f = write_tmp("id,step,s,v,action_index\n");
        assert!(matches!(ingest_trajectories(f.path(), 4), Err(Error::Parse { line: 1, .. })));
        let missing = Path::new("/nonexistent/traj.csv");
        assert!(matches!(ingest_trajectories(missing, 4), Err(Error::MissingArtifact(_))));
    }

    #[test]
    fn csv_round_trip() {
        let t = vec![Trajectory {
            vehicle_id: "x".into(),
            source: "t".into(),
            steps: vec![
                (Vehicle { role: Role::Social, s: 1.5, v: 2.25, beta: None, finished: false }, 1),
                (Vehicle { role: Role::Social, s: 2.0, v: 2.5, beta: None, finished: false }, 3),
            ],
        }];
        let mut buf = Vec::new();
        write_trajectories_csv(&t, &mut buf).unwrap();
        let f = write_tmp(std::str::from_utf8(&buf).unwrap());
        let back = ingest_trajectories(f.path(), 4).unwrap();
        assert_eq!(back[0].steps, t[0].steps);
    }

    #[test]
    fn default_grid() {
        let g = default_beta_grid();
        assert_eq!(g.len(), 51);
        assert_eq!(g[0], -1.5);
        assert_eq!(g[25], 1.0);
        assert_eq!(g[50], 3.5);
    }

    #[test]
    fn flat_likelihood_ties_to_median() {
        let meta = SoftmaxPolicy::zeros(meta_map());
        let t = Trajectory {
            vehicle_id: "x".into(),
            source: "t".into(),
            steps: vec![(Vehicle { role: Role::Social, s: 0.0, v: 3.0, beta: None, finished: false }, 1)],
        };
        let e = estimate_beta(&t, &meta, &default_beta_grid()).unwrap();
        assert_eq!(e.beta_hat, 1.0);
        assert_eq!(e.spread, 0.0);
        assert!(e.low_confidence);
        let empty = Trajectory { steps: vec![], ..t };
        assert!(matches!(estimate_beta(&empty, &meta, &default_beta_grid()), Err(Error::Empty(_))));
    }

    #[test]
    fn likelihood_is_order_invariant() {
        let mut meta = SoftmaxPolicy::zeros(meta_map());
        for (i, t) in meta.theta.iter_mut().enumerate() {
            *t = ((i * 7919) % 13) as f64 / 6.0 - 1.0;
        }
        let steps: Vec<(Vehicle, usize)> = (0..12)
            .map(|i| (Vehicle { role: Role::Social, s: i as f64, v: (i % 10) as f64, beta: None, finished: false }, i % 4))
            .collect();
        let t = Trajectory { vehicle_id: "x".into(), source: "t".into(), steps: steps.clone() };
        let mut rev = t.clone();
        rev.steps.reverse();
        let grid = default_beta_grid();
        let a = estimate_beta(&t, &meta, &grid).unwrap();
        let b = estimate_beta(&rev, &meta, &grid).unwrap();
        assert_eq!(a.beta_hat, b.beta_hat);
        for (x, y) in a.curve.iter().zip(&b.curve) {
            assert!((x.1 - y.1).abs() <= 1e-9 * x.1.abs().max(1.0));
        }
    }

    #[test]
    fn fit_moments_are_sample_moments() {
        let b = [1.2, 1.9, 2.1, 1.7, 1.8];
        let fit = fit_naturalistic(&b, Bandwidth::Auto).unwrap();
        let (m, s) = sample_moments(&b);
        assert_eq!(fit.gaussian, ScenarioDistribution::Gaussian { mu: m, sigma: s });
        assert!(matches!(fit_naturalistic(&[1.0], Bandwidth::Auto), Err(Error::DegenerateSamples(_)) | Err(Error::Empty(_))));
        let two = fit_naturalistic(&[-1.0, 1.0], Bandwidth::Fixed(1.0)).unwrap();
        assert_eq!(two.kde, ScenarioDistribution::Kde { samples: vec![-1.0, 1.0], bandwidth: 1.0 });
    }
}
