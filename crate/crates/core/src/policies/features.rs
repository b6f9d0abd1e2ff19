//! Feature maps for linear-softmax policies.
//!
//! All maps are sparse: each action activates the same small number of
//! coordinates. The ego and social maps are one-hot products of discretized
//! observations crossed with the action index; the ego map adds coarse
//! (progress, speed) and (progress, gap) tiles and a per-action bias on top. The meta map reuses the social
//! cells but spreads each one over a bank of β radial-basis centres, so the
//! meta-policy is a β-weighted blend of per-centre tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{Role, Scenario, Vehicle, WorldState};

/// Sparse per-action feature vectors. Action `a` owns
/// `entries[a * nnz .. (a + 1) * nnz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionFeatures {
    pub nnz: usize,
    pub entries: Vec<(usize, f64)>,
}

impl ActionFeatures {
    pub fn n_actions(&self) -> usize {
        if self.nnz == 0 {
            0
        } else {
            self.entries.len() / self.nnz
        }
    }

    pub fn action(&self, a: usize) -> &[(usize, f64)] {
        &self.entries[a * self.nnz..(a + 1) * self.nnz]
    }

    /// Builds from dense per-action vectors (zeros dropped).
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nnz = rows.first().map_or(0, Vec::len);
        let entries = rows
            .iter()
            .flat_map(|r| r.iter().copied().enumerate())
            .collect();
        Self { nnz, entries }
    }

    pub fn dense(&self, a: usize, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for &(i, v) in self.action(a) {
            out[i] += v;
        }
        out
    }
}

/// Index of the bin holding `x` given sorted inner edges (`edges.len() + 1` bins).
pub fn bin(x: f64, edges: &[f64]) -> usize {
    edges.partition_point(|e| *e <= x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoFeatures {
    pub progress_edges: Vec<f64>,
    pub speed_edges: Vec<f64>,
    /// Gap edges, meters of social-path arc between the ego's merge-equivalent
    /// position and the tracked social vehicle (positive: still upstream).
    pub gap_edges: Vec<f64>,
    pub social_speed_edges: Vec<f64>,
    /// Social vehicles further than this past the ego are ignored.
    pub ahead_window: f64,
    pub n_actions: usize,
}

impl EgoFeatures {
    pub fn new(n_actions: usize) -> Self {
        Self {
            progress_edges: vec![10.0, 18.0, 24.0, 27.0, 30.0, 36.0, 45.0],
            speed_edges: vec![1.0, 4.0, 7.0],
            gap_edges: vec![-5.0, 0.0, 5.0, 10.0, 20.0, 30.0, 45.0],
            social_speed_edges: vec![3.0, 6.0, 8.0],
            ahead_window: 10.0,
            n_actions,
        }
    }

    fn dims(&self) -> [usize; 4] {
        [
            self.progress_edges.len() + 1,
            self.speed_edges.len() + 1,
            self.gap_edges.len() + 1,
            self.social_speed_edges.len() + 1,
        ]
    }

    pub fn n_cells(&self) -> usize {
        self.dims().iter().product()
    }

    /// Gap and speed of the social vehicle nearest to the ego's merge
    /// position, among active vehicles not more than `ahead_window` past it.
    pub fn tracked_social(&self, scenario: &Scenario, state: &WorldState) -> Option<(f64, f64)> {
        let ego_ref = scenario.ego_on_social_path(state.ego());
        state
            .socials()
            .filter(|(_, v)| !v.finished)
            .map(|(_, v)| (ego_ref - v.s, v.v))
            .filter(|(gap, _)| *gap >= -self.ahead_window)
            .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
    }

    /// Coarse (progress, speed) cells shared across all traffic situations.
    pub fn n_coarse(&self) -> usize {
        let [np, nv, _, _] = self.dims();
        np * nv
    }

    /// Coarse (progress, gap) cells shared across speeds.
    pub fn n_gap_tiles(&self) -> usize {
        let [np, _, ng, _] = self.dims();
        np * ng
    }

    /// Full cell table, the two coarse tables, then one bias per action.
    pub fn dim(&self) -> usize {
        (self.n_cells() + self.n_coarse() + self.n_gap_tiles() + 1) * self.n_actions
    }

    /// Full cell plus coarse and bias tiles, each crossed with the action.
    pub fn featurize(&self, scenario: &Scenario, state: &WorldState) -> ActionFeatures {
        let a_n = self.n_actions;
        let [_, nv, ng, nsv] = self.dims();
        let cell = self.cell(scenario, state);
        let (pv, g) = (cell / (ng * nsv), (cell / nsv) % ng);
        let p = pv / nv;
        let coarse_base = self.n_cells() * a_n;
        let gap_base = coarse_base + self.n_coarse() * a_n;
        let bias_base = gap_base + self.n_gap_tiles() * a_n;
        let mut entries = Vec::with_capacity(4 * a_n);
        for a in 0..a_n {
            entries.push((cell * a_n + a, 1.0));
            entries.push((coarse_base + pv * a_n + a, 1.0));
            entries.push((gap_base + (p * ng + g) * a_n + a, 1.0));
            entries.push((bias_base + a, 1.0));
        }
        ActionFeatures { nnz: 4, entries }
    }

    pub fn cell(&self, scenario: &Scenario, state: &WorldState) -> usize {
        let [_, nv, ng, nsv] = self.dims();
        let ego = state.ego();
        let p = bin(ego.s, &self.progress_edges);
        let v = bin(ego.v, &self.speed_edges);
        let (g, sv) = match self.tracked_social(scenario, state) {
            Some((gap, speed)) => (bin(gap, &self.gap_edges), bin(speed, &self.social_speed_edges)),
            None => (ng - 1, 0),
        };
        ((p * nv + v) * ng + g) * nsv + sv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialFeatures {
    pub speed_edges: Vec<f64>,
    pub n_actions: usize,
}

impl SocialFeatures {
    pub fn new(n_actions: usize) -> Self {
        Self {
            speed_edges: (1..10).map(f64::from).collect(),
            n_actions,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.speed_edges.len() + 1
    }

    pub fn cell(&self, vehicle: &Vehicle) -> usize {
        bin(vehicle.v, &self.speed_edges)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatures {
    pub social: SocialFeatures,
    /// Radial-basis centres over β (the baseline preferences).
    pub centers: Vec<f64>,
    pub width: f64,
}

impl MetaFeatures {
    pub fn new(social: SocialFeatures, centers: Vec<f64>, width: f64) -> Self {
        Self { social, centers, width }
    }

    /// Normalized radial-basis encoding of β; entries sum to one.
    pub fn encode_beta(&self, beta: f64) -> Vec<f64> {
        let raw: Vec<f64> = self
            .centers
            .iter()
            .map(|c| (-0.5 * ((beta - c) / self.width).powi(2)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 && total.is_finite() {
            raw.into_iter().map(|r| r / total).collect()
        } else {
            // Far outside the centre range every kernel underflows; fall back
            // to the nearest centre.
            let nearest = self
                .centers
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - beta).abs().total_cmp(&(b.1 - beta).abs()))
                .map_or(0, |(i, _)| i);
            (0..self.centers.len()).map(|i| f64::from(i == nearest)).collect()
        }
    }
}

/// Descriptor of how a policy turns a state into per-action features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMap {
    Ego(EgoFeatures),
    Social(SocialFeatures),
    MetaSocial(MetaFeatures),
}

impl FeatureMap {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Ego(_) => "ego",
            FeatureMap::Social(_) => "social",
            FeatureMap::MetaSocial(_) => "meta_social",
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            FeatureMap::Ego(f) => f.n_actions,
            FeatureMap::Social(f) => f.n_actions,
            FeatureMap::MetaSocial(f) => f.social.n_actions,
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            FeatureMap::Ego(f) => f.n_cells(),
            FeatureMap::Social(f) => f.n_cells(),
            FeatureMap::MetaSocial(f) => f.social.n_cells(),
        }
    }

    pub fn dim(&self) -> usize {
        let per_block = self.n_cells() * self.n_actions();
        match self {
            FeatureMap::Ego(f) => f.dim(),
            FeatureMap::MetaSocial(f) => per_block * f.centers.len(),
            FeatureMap::Social(_) => per_block,
        }
    }

    pub fn is_social(&self) -> bool {
        !matches!(self, FeatureMap::Ego(_))
    }

    /// Discretized state cell (β excluded); used to key return baselines.
    pub fn cell(&self, scenario: &Scenario, state: &WorldState, vehicle: usize) -> usize {
        match self {
            FeatureMap::Ego(f) => f.cell(scenario, state),
            FeatureMap::Social(f) => f.cell(&state.vehicles[vehicle]),
            FeatureMap::MetaSocial(f) => f.social.cell(&state.vehicles[vehicle]),
        }
    }

    pub fn featurize(&self, scenario: &Scenario, state: &WorldState, vehicle: usize) -> ActionFeatures {
        match self {
            FeatureMap::Ego(f) => f.featurize(scenario, state),
            _ => self
                .featurize_vehicle(&state.vehicles[vehicle])
                .expect("social feature map"),
        }
    }

    /// Features that depend only on the vehicle's own record (social maps).
    pub fn featurize_vehicle(&self, vehicle: &Vehicle) -> Result<ActionFeatures> {
        match self {
            FeatureMap::Ego(_) => Err(Error::Incompatible(
                "ego features need the full world state".into(),
            )),
            FeatureMap::Social(f) => Ok(one_hot(f.cell(vehicle), f.n_actions)),
            FeatureMap::MetaSocial(f) => {
                let cell = f.social.cell(vehicle);
                let n_act = f.social.n_actions;
                let block = f.social.n_cells() * n_act;
                let enc = f.encode_beta(vehicle.beta.unwrap_or(0.0));
                let mut entries = Vec::with_capacity(n_act * enc.len());
                for a in 0..n_act {
                    for (c, w) in enc.iter().enumerate() {
                        entries.push((c * block + cell * n_act + a, *w));
                    }
                }
                Ok(ActionFeatures { nnz: enc.len(), entries })
            }
        }
    }

    pub fn check_vehicle_role(&self, vehicle: &Vehicle) -> Result<()> {
        match (self, vehicle.role) {
            (FeatureMap::Ego(_), Role::Ego) => Ok(()),
            (FeatureMap::Ego(_), Role::Social) | (_, Role::Ego) => Err(Error::Incompatible(format!(
                "{} features applied to a {:?} vehicle",
                self.name(),
                vehicle.role
            ))),
            _ => Ok(()),
        }
    }
}

fn one_hot(cell: usize, n_actions: usize) -> ActionFeatures {
    ActionFeatures {
        nnz: 1,
        entries: (0..n_actions).map(|a| (cell * n_actions + a, 1.0)).collect(),
    }
}
