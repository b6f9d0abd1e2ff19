//! Linear-softmax policies over discrete accelerations.

pub mod features;

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use features::{ActionFeatures, EgoFeatures, FeatureMap, MetaFeatures, SocialFeatures};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::simulator::{Driver, Scenario, Vehicle, WorldState};

const POLICY_FORMAT: &str = "tmerge-policy";
const POLICY_VERSION: u32 = 1;

/// `π(a|s) ∝ exp(θᵀφ(s, a))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub theta: Vec<f64>,
    pub feature_map: FeatureMap,
}

impl SoftmaxPolicy {
    /// Zero-parameter (uniform) policy.
    pub fn zeros(feature_map: FeatureMap) -> Self {
        Self {
            theta: vec![0.0; feature_map.dim()],
            feature_map,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.feature_map.n_actions()
    }

    pub fn features(&self, scenario: &Scenario, state: &WorldState, vehicle: usize) -> ActionFeatures {
        self.feature_map.featurize(scenario, state, vehicle)
    }

    pub fn logits(&self, x: &ActionFeatures) -> Vec<f64> {
        (0..x.n_actions())
            .map(|a| x.action(a).iter().map(|&(i, v)| self.theta[i] * v).sum())
            .collect()
    }

    pub fn action_probs(&self, x: &ActionFeatures) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn log_prob(&self, x: &ActionFeatures, action: usize) -> f64 {
        let logits = self.logits(x);
        logits[action] - log_sum_exp(&logits)
    }

    /// `∇θ ln π(a|s)` as sparse (index, value) pairs; indices may repeat.
    pub fn score(&self, x: &ActionFeatures, action: usize) -> Vec<(usize, f64)> {
        let probs = self.action_probs(x);
        let mut out: Vec<(usize, f64)> = x.action(action).to_vec();
        for (b, p) in probs.iter().enumerate() {
            out.extend(x.action(b).iter().map(|&(i, v)| (i, -p * v)));
        }
        out
    }

    /// Probabilities for a social-family policy at a vehicle snapshot.
    pub fn vehicle_probs(&self, vehicle: &Vehicle) -> Result<Vec<f64>> {
        Ok(self.action_probs(&self.feature_map.featurize_vehicle(vehicle)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PolicyFile {
            format: POLICY_FORMAT.to_string(),
            version: POLICY_VERSION,
            feature_map: self.feature_map.clone(),
            theta: self.theta.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let file: PolicyFile = serde_json::from_str(&text)?;
        if file.format != POLICY_FORMAT || file.version != POLICY_VERSION {
            return Err(Error::Incompatible(format!(
                "{}: expected {POLICY_FORMAT} v{POLICY_VERSION}, found {} v{}",
                path.display(),
                file.format,
                file.version
            )));
        }
        if file.theta.len() != file.feature_map.dim() {
            return Err(Error::Incompatible(format!(
                "{}: θ has {} entries, feature map needs {}",
                path.display(),
                file.theta.len(),
                file.feature_map.dim()
            )));
        }
        Ok(Self {
            theta: file.theta,
            feature_map: file.feature_map,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    feature_map: FeatureMap,
    theta: Vec<f64>,
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl Driver for SoftmaxPolicy {
    fn act(&self, scenario: &Scenario, state: &WorldState, vehicle: usize, rng: &mut SimRng) -> usize {
        let probs = self.action_probs(&self.features(scenario, state, vehicle));
        sample_index(&probs, rng)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn action_probs(policy: &SoftmaxPolicy, features: &ActionFeatures) -> Vec<f64> {
    policy.action_probs(features)
}

/// Dense `∇θ ln π(a|s) = φ(s,a) − Σ_b π(b|s) φ(s,b)`.
pub fn score_gradient(policy: &SoftmaxPolicy, features: &ActionFeatures, action: usize) -> Vec<f64> {
    let mut g = vec![0.0; policy.theta.len()];
    for (i, v) in policy.score(features, action) {
        g[i] += v;
    }
    g
}

/// `Σ_a p_a ln(p_a / q_a)`.
pub fn kl_probs(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pa, _)| **pa > 0.0)
        .map(|(pa, qa)| pa * (pa / qa).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Mean over `states` of `KL(p(·|s) ‖ q(·|s))` for social-family policies.
pub fn kl_divergence(p: &SoftmaxPolicy, q: &SoftmaxPolicy, states: &[Vehicle]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Empty("KL state batch"));
    }
    if p.n_actions() != q.n_actions() {
        return Err(Error::Incompatible("policies have different action sets".into()));
    }
    let mut total = 0.0;
    for v in states {
        total += kl_probs(&p.vehicle_probs(v)?, &q.vehicle_probs(v)?);
    }
    Ok(total / states.len() as f64)
}

/// Per-preference social policies used to anchor the meta-policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSet {
    pub betas: Vec<f64>,
    pub policies: Vec<SoftmaxPolicy>,
    /// Neighbourhood radius `d`.
    pub radius: f64,
}

impl BaselineSet {
    pub fn new(betas: Vec<f64>, policies: Vec<SoftmaxPolicy>, radius: f64) -> Result<Self> {
        if betas.is_empty() || betas.len() != policies.len() {
            return Err(Error::InvalidConfig("one baseline policy per preference required".into()));
        }
        if betas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("baseline preferences must be strictly increasing".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::InvalidConfig("neighbourhood radius must be > 0".into()));
        }
        Ok(Self { betas, policies, radius })
    }
}

/// Baselines with `|β̄ − β| ≤ d`, in preference order. May be empty.
pub fn nearest_baselines(beta: f64, baselines: &BaselineSet) -> Vec<(f64, &SoftmaxPolicy)> {
    nearest_indices(beta, &baselines.betas, baselines.radius)
        .into_iter()
        .map(|i| (baselines.betas[i], &baselines.policies[i]))
        .collect()
}

pub fn nearest_indices(beta: f64, grid: &[f64], radius: f64) -> Vec<usize> {
    grid.iter()
        .enumerate()
        .filter(|(_, b)| (*b - beta).abs() <= radius)
        .map(|(i, _)| i)
        .collect()
}
