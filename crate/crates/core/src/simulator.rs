//! Seeded T-intersection merge game.
//!
//! The major road is a straight west-to-east path; the ego vehicle comes up a
//! minor road from the south and turns right to merge into the same lane.
//! Vehicles move along their paths with a path-progress double integrator and
//! a discrete set of accelerations. Footprints are discs: the episode ends in
//! a collision as soon as the ego and any active social vehicle are within
//! `collision_radius` of each other.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, SimRng};

pub type Point = [f64; 2];

/// Piecewise-linear path parameterized by arc length.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Point>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig("a path needs at least two points".into()));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        cumulative.push(0.0);
        for w in points.windows(2) {
            let seg = dist(w[0], w[1]);
            if !(seg > 0.0) {
                return Err(Error::InvalidConfig("path has a zero-length segment".into()));
            }
            cumulative.push(cumulative.last().unwrap() + seg);
        }
        Ok(Self { points, cumulative })
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Point at arc length `s`, clamped to the path ends.
    pub fn position_at(&self, s: f64) -> Point {
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => return self.points[i],
            Err(i) => i.clamp(1, self.points.len() - 1),
        };
        let (a, b) = (self.points[i - 1], self.points[i]);
        let t = (s - self.cumulative[i - 1]) / (self.cumulative[i] - self.cumulative[i - 1]);
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// Distance from `p` to the path and the arc length of the closest point.
    pub fn project(&self, p: Point) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for (i, w) in self.points.windows(2).enumerate() {
            let (a, b) = (w[0], w[1]);
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len2 = ab[0] * ab[0] + ab[1] * ab[1];
            let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
            let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
            let d = dist(p, q);
            if d < best.0 {
                best = (d, self.cumulative[i] + t * len2.sqrt());
            }
        }
        best
    }
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Initial placement range for one social vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnRange {
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

/// Social reward `r_goal + β·r_speed`.
///
/// `r_speed = -v/v_max` per step. `r_goal` pays `goal_bonus` on arrival and a
/// concave progress term `progress_gain·u - comfort·u²` (with `u = v/v_max`)
/// per step, so each β has an interior preferred speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocialRewardModel {
    pub goal_bonus: f64,
    pub progress_gain: f64,
    pub comfort: f64,
}

impl Default for SocialRewardModel {
    fn default() -> Self {
        Self {
            goal_bonus: 1.0,
            progress_gain: 3.5,
            comfort: 2.5,
        }
    }
}

impl SocialRewardModel {
    pub fn r_goal(&self, u: f64, arrived: bool) -> f64 {
        self.progress_gain * u - self.comfort * u * u + if arrived { self.goal_bonus } else { 0.0 }
    }

    pub fn r_speed(&self, u: f64) -> f64 {
        -u
    }

    /// Speed (as a fraction of `v_max`) maximizing the per-step reward at `beta`.
    pub fn preferred_fraction(&self, beta: f64) -> f64 {
        ((self.progress_gain - beta) / (2.0 * self.comfort)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoRewardModel {
    pub success: f64,
    pub collision: f64,
    pub per_step: f64,
}

impl Default for EgoRewardModel {
    fn default() -> Self {
        Self {
            success: 1.0,
            collision: -2.0,
            per_step: -0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub max_steps: usize,
    pub ego_path: Vec<Point>,
    pub social_path: Vec<Point>,
    /// Ego progress that counts as crossing; defaults to the ego path length.
    pub ego_goal: Option<f64>,
    pub v_max: f64,
    pub accel_set: Vec<f64>,
    pub collision_radius: f64,
    pub n_social: usize,
    /// Cycled when `n_social` exceeds its length.
    pub social_spawn: Vec<SpawnRange>,
    pub social_reward: SocialRewardModel,
    pub ego_reward: EgoRewardModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            max_steps: 100,
            ego_path: vec![[0.0, -30.0], [0.0, 0.0], [30.0, 0.0]],
            social_path: vec![[-80.0, 0.0], [200.0, 0.0]],
            ego_goal: None,
            v_max: 10.0,
            accel_set: vec![-4.0, -2.0, 0.0, 2.0],
            collision_radius: 2.0,
            n_social: 2,
            social_spawn: vec![
                SpawnRange { s_lo: 60.0, s_hi: 80.0, v_lo: 2.0, v_hi: 6.0 },
                SpawnRange { s_lo: 35.0, s_hi: 55.0, v_lo: 2.0, v_hi: 6.0 },
            ],
            social_reward: SocialRewardModel::default(),
            ego_reward: EgoRewardModel::default(),
        }
    }
}

/// A validated [`ScenarioConfig`] together with its derived geometry.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub ego_path: Polyline,
    pub social_path: Polyline,
    pub ego_goal: f64,
    /// Ego progress where its path first meets the social path.
    pub merge_s_ego: f64,
    /// Social-path arc length of the same point.
    pub merge_s_social: f64,
    /// Ego progress interval within `collision_radius` of the social path.
    pub conflict_region: (f64, f64),
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(config.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if config.max_steps == 0 {
            return bad("max_steps must be >= 1");
        }
        if config.accel_set.is_empty() {
            return bad("accel_set must be non-empty");
        }
        if config.accel_set.windows(2).any(|w| w[0] >= w[1]) {
            return bad("accel_set must be strictly increasing");
        }
        if !(config.v_max > 0.0) {
            return bad("v_max must be > 0");
        }
        if !(config.collision_radius > 0.0) {
            return bad("collision_radius must be > 0");
        }
        if config.n_social > 0 && config.social_spawn.is_empty() {
            return bad("social_spawn must be non-empty when n_social > 0");
        }
        for r in &config.social_spawn {
            if r.s_lo > r.s_hi || r.v_lo > r.v_hi || r.s_lo < 0.0 || r.v_lo < 0.0 || r.v_hi > config.v_max {
                return bad("social_spawn ranges must be ordered, non-negative and within v_max");
            }
        }
        let ego_path = Polyline::new(config.ego_path.clone())?;
        let social_path = Polyline::new(config.social_path.clone())?;
        let ego_goal = config.ego_goal.unwrap_or(ego_path.length());
        if !(ego_goal > 0.0 && ego_goal <= ego_path.length() + 1e-9) {
            return bad("ego_goal must lie on the ego path");
        }

        // Scan the ego path for the conflict region and the merge point.
        let step = 0.05;
        let n = (ego_path.length() / step).ceil() as usize;
        let samples: Vec<(f64, f64, f64)> = (0..=n)
            .map(|i| {
                let s = (i as f64 * step).min(ego_path.length());
                let (d, arc) = social_path.project(ego_path.position_at(s));
                (s, d, arc)
            })
            .collect();
        let d_min = samples.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        let inside: Vec<bool> = samples.iter().map(|x| x.1 <= config.collision_radius).collect();
        let entries = inside
            .iter()
            .enumerate()
            .filter(|&(i, &b)| b && (i == 0 || !inside[i - 1]))
            .count();
        if entries != 1 {
            return bad("ego and social paths must intersect in exactly one conflict region");
        }
        let first = inside.iter().position(|&b| b).unwrap();
        let last = inside.iter().rposition(|&b| b).unwrap();
        let merge = samples.iter().find(|x| x.1 <= d_min + 1e-6).unwrap();
        Ok(Self {
            ego_goal,
            merge_s_ego: merge.0,
            merge_s_social: merge.2,
            conflict_region: (samples[first].0, samples[last].0),
            ego_path,
            social_path,
            config,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.config.accel_set.len()
    }

    /// Index of the strongest braking action.
    pub fn brake_action(&self) -> usize {
        0
    }

    pub fn position(&self, vehicle: &Vehicle) -> Point {
        match vehicle.role {
            Role::Ego => self.ego_path.position_at(vehicle.s),
            Role::Social => self.social_path.position_at(vehicle.s),
        }
    }

    /// The ego's location expressed as social-path arc length: the merge
    /// point until the ego reaches it, its projection afterwards.
    pub fn ego_on_social_path(&self, ego: &Vehicle) -> f64 {
        if ego.s < self.merge_s_ego {
            self.merge_s_social
        } else {
            self.social_path.project(self.ego_path.position_at(ego.s)).1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ego,
    Social,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub role: Role,
    /// Path progress in meters.
    pub s: f64,
    /// Speed in m/s.
    pub v: f64,
    /// Preference of a social vehicle; `None` for the ego.
    pub beta: Option<f64>,
    /// Social vehicle has reached the end of its path and left the scene.
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Collision,
    Timeout,
}

impl Outcome {
    pub fn is_failure(self) -> bool {
        !matches!(self, Outcome::Success)
    }
}

/// Snapshot of the game. `vehicles[0]` is always the ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub step: usize,
    pub vehicles: Vec<Vehicle>,
    pub outcome: Option<Outcome>,
}

impl WorldState {
    pub fn ego(&self) -> &Vehicle {
        &self.vehicles[0]
    }

    pub fn is_terminal(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn socials(&self) -> impl Iterator<Item = (usize, &Vehicle)> {
        self.vehicles.iter().enumerate().skip(1)
    }
}

pub fn reset<R: Rng + ?Sized>(scenario: &Scenario, betas: &[f64], rng: &mut R) -> Result<WorldState> {
    let cfg = &scenario.config;
    if betas.len() != cfg.n_social {
        return Err(Error::BetaCount {
            expected: cfg.n_social,
            actual: betas.len(),
        });
    }
    let mut vehicles = Vec::with_capacity(cfg.n_social + 1);
    vehicles.push(Vehicle {
        role: Role::Ego,
        s: 0.0,
        v: 0.0,
        beta: None,
        finished: false,
    });
    for (i, &beta) in betas.iter().enumerate() {
        let r = cfg.social_spawn[i % cfg.social_spawn.len()];
        let s = r.s_lo + (r.s_hi - r.s_lo) * rng.random::<f64>();
        let v = r.v_lo + (r.v_hi - r.v_lo) * rng.random::<f64>();
        vehicles.push(Vehicle {
            role: Role::Social,
            s,
            v,
            beta: Some(beta),
            finished: false,
        });
    }
    Ok(WorldState {
        step: 0,
        vehicles,
        outcome: None,
    })
}

/// Result of one [`step`].
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: WorldState,
    pub ego_reward: f64,
    /// One entry per social vehicle, zero once it has finished.
    pub social_rewards: Vec<f64>,
    pub outcome: Option<Outcome>,
}

fn advance(v: f64, s: f64, a: f64, dt: f64, v_max: f64) -> (f64, f64) {
    let v2 = (v + a * dt).clamp(0.0, v_max);
    (v2, s + v2 * dt)
}

/// Advances the game by one `dt`. Actions index into `accel_set`; entries of
/// `social_actions` for finished vehicles are ignored.
pub fn step(
    scenario: &Scenario,
    state: &WorldState,
    ego_action: usize,
    social_actions: &[Option<usize>],
) -> Result<Transition> {
    if state.is_terminal() {
        return Err(Error::TerminalState);
    }
    let cfg = &scenario.config;
    let n_act = cfg.accel_set.len();
    let n_soc = state.vehicles.len() - 1;
    if social_actions.len() != n_soc {
        return Err(Error::BetaCount {
            expected: n_soc,
            actual: social_actions.len(),
        });
    }
    if ego_action >= n_act {
        return Err(Error::ActionOutOfRange { index: ego_action, len: n_act });
    }

    let mut next = state.clone();
    next.step += 1;
    let ego = &mut next.vehicles[0];
    (ego.v, ego.s) = advance(ego.v, ego.s, cfg.accel_set[ego_action], cfg.dt, cfg.v_max);

    let social_len = scenario.social_path.length();
    let mut social_rewards = vec![0.0; n_soc];
    for (j, action) in social_actions.iter().enumerate() {
        let veh = &mut next.vehicles[j + 1];
        if veh.finished {
            continue;
        }
        let a = action.ok_or_else(|| {
            Error::InvalidConfig(format!("missing action for active social vehicle {j}"))
        })?;
        if a >= n_act {
            return Err(Error::ActionOutOfRange { index: a, len: n_act });
        }
        (veh.v, veh.s) = advance(veh.v, veh.s, cfg.accel_set[a], cfg.dt, cfg.v_max);
        let arrived = veh.s >= social_len;
        let u = veh.v / cfg.v_max;
        let beta = veh.beta.unwrap_or(0.0);
        let rm = &cfg.social_reward;
        social_rewards[j] = rm.r_goal(u, arrived) + beta * rm.r_speed(u);
        veh.finished = arrived;
    }

    let ego_pos = scenario.position(next.ego());
    let collided = next
        .socials()
        .filter(|(_, v)| !v.finished)
        .any(|(_, v)| dist(ego_pos, scenario.position(v)) <= cfg.collision_radius);
    let outcome = if collided {
        Some(Outcome::Collision)
    } else if next.ego().s >= scenario.ego_goal {
        Some(Outcome::Success)
    } else if next.step >= cfg.max_steps {
        Some(Outcome::Timeout)
    } else {
        None
    };
    let rm = &cfg.ego_reward;
    let ego_reward = rm.per_step
        + match outcome {
            Some(Outcome::Success) => rm.success,
            Some(Outcome::Collision) => rm.collision,
            _ => 0.0,
        };
    next.outcome = outcome;
    Ok(Transition {
        state: next,
        ego_reward,
        social_rewards,
        outcome,
    })
}

/// Anything that picks an acceleration index for a vehicle.
pub trait Driver: Sync {
    fn act(&self, scenario: &Scenario, state: &WorldState, vehicle: usize, rng: &mut SimRng) -> usize;
}

/// Always applies the same action.
#[derive(Debug, Clone, Copy)]
pub struct FixedAction(pub usize);

impl Driver for FixedAction {
    fn act(&self, _: &Scenario, _: &WorldState, _: usize, _: &mut SimRng) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// State before the actions were applied.
    pub state: WorldState,
    pub ego_action: usize,
    pub social_actions: Vec<Option<usize>>,
    pub ego_reward: f64,
    pub social_rewards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub betas: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub final_state: WorldState,
    pub outcome: Outcome,
    /// `Σ γ^t R_t` for the ego.
    pub ego_return: f64,
    pub length: usize,
}

#[derive(Serialize)]
struct EpisodeHeader<'a> {
    seed: u64,
    betas: &'a [f64],
    outcome: Outcome,
    ego_return: f64,
    length: usize,
}

#[derive(Serialize)]
struct StepLine<'a> {
    t: usize,
    vehicles: &'a [Vehicle],
    ego_action: usize,
    social_actions: &'a [Option<usize>],
    ego_reward: f64,
    social_rewards: &'a [f64],
}

impl EpisodeRecord {
    /// Header line followed by one line per step; the last line holds the
    /// terminal state with no actions.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = EpisodeHeader {
            seed: self.seed,
            betas: &self.betas,
            outcome: self.outcome,
            ego_return: self.ego_return,
            length: self.length,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for (t, s) in self.steps.iter().enumerate() {
            let line = StepLine {
                t,
                vehicles: &s.state.vehicles,
                ego_action: s.ego_action,
                social_actions: &s.social_actions,
                ego_reward: s.ego_reward,
                social_rewards: &s.social_rewards,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut w,
            &serde_json::json!({ "t": self.length, "vehicles": self.final_state.vehicles }),
        )?;
        w.write_all(b"\n")?;
        Ok(())
    }
}

/// Plays one episode to termination. All randomness (spawn jitter and action
/// sampling) comes from `seed`.
pub fn rollout(
    scenario: &Scenario,
    ego: &dyn Driver,
    social: &dyn Driver,
    betas: &[f64],
    seed: u64,
    gamma: f64,
) -> Result<EpisodeRecord> {
    let mut rng = rng_from_seed(seed);
    let mut state = reset(scenario, betas, &mut rng)?;
    let mut steps = Vec::with_capacity(scenario.config.max_steps);
    let mut ego_return = 0.0;
    let mut discount = 1.0;
    loop {
        let ego_action = ego.act(scenario, &state, 0, &mut rng);
        let social_actions: Vec<Option<usize>> = (1..state.vehicles.len())
            .map(|i| {
                (!state.vehicles[i].finished).then(|| social.act(scenario, &state, i, &mut rng))
            })
            .collect();
        let tr = step(scenario, &state, ego_action, &social_actions)?;
        ego_return += discount * tr.ego_reward;
        discount *= gamma;
        let prev = std::mem::replace(&mut state, tr.state);
        steps.push(StepRecord {
            state: prev,
            ego_action,
            social_actions,
            ego_reward: tr.ego_reward,
            social_rewards: tr.social_rewards,
        });
        if let Some(outcome) = tr.outcome {
            return Ok(EpisodeRecord {
                seed,
                betas: betas.to_vec(),
                length: steps.len(),
                steps,
                final_state: state,
                outcome,
                ego_return,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> Scenario {
        Scenario::new(ScenarioConfig::default()).unwrap()
    }

    #[test]
    fn default_geometry() {
        let sc = scenario();
        assert_eq!(sc.ego_goal, 60.0);
        assert!((sc.merge_s_ego - 30.0).abs() < 1e-9);
        assert!((sc.merge_s_social - 80.0).abs() < 1e-9);
        assert!((sc.conflict_region.0 - 28.0).abs() < 0.06);
        assert_eq!(sc.conflict_region.1, 60.0);
        assert_eq!(sc.ego_path.position_at(45.0), [15.0, 0.0]);
    }

    #[test]
    fn disjoint_paths_rejected() {
        let cfg = ScenarioConfig {
            social_path: vec![[-80.0, 50.0], [60.0, 50.0]],
            ..ScenarioConfig::default()
        };
        assert!(Scenario::new(cfg).is_err());
        let cfg = ScenarioConfig {
            ego_path: vec![[0.0, -30.0], [0.0, 30.0], [10.0, 30.0], [10.0, -30.0]],
            ..ScenarioConfig::default()
        };
        let err = Scenario::new(cfg).unwrap_err();
        assert!(err.to_string().contains("exactly one conflict region"));
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            ScenarioConfig { dt: 0.0, ..Default::default() },
            ScenarioConfig { max_steps: 0, ..Default::default() },
            ScenarioConfig { accel_set: vec![], ..Default::default() },
            ScenarioConfig { v_max: -1.0, ..Default::default() },
        ] {
            assert!(Scenario::new(cfg).is_err());
        }
    }

    #[test]
    fn reset_examples() {
        let sc = Scenario::new(ScenarioConfig { n_social: 0, ..Default::default() }).unwrap();
        let st = reset(&sc, &[], &mut rng_from_seed(1)).unwrap();
        assert_eq!(st.vehicles.len(), 1);
        assert_eq!(st.ego().v, 0.0);

        let sc = scenario();
        let a = reset(&sc, &[0.5, 1.0], &mut rng_from_seed(9)).unwrap();
        let b = reset(&sc, &[0.5, 1.0], &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            reset(&sc, &[0.5], &mut rng_from_seed(9)),
            Err(Error::BetaCount { expected: 2, actual: 1 })
        ));

        let sc = Scenario::new(ScenarioConfig {
            n_social: 5,
            social_spawn: vec![SpawnRange { s_lo: 20.0, s_hi: 40.0, v_lo: 0.0, v_hi: 5.0 }],
            ..Default::default()
        })
        .unwrap();
        for seed in 0..50 {
            let st = reset(&sc, &[0.0; 5], &mut rng_from_seed(seed)).unwrap();
            assert!(st.socials().all(|(_, v)| (20.0..=40.0).contains(&v.s)));
        }
    }

    #[test]
    fn speed_clamps_at_zero() {
        let sc = Scenario::new(ScenarioConfig { n_social: 0, ..Default::default() }).unwrap();
        let st = reset(&sc, &[], &mut rng_from_seed(1)).unwrap();
        let tr = step(&sc, &st, 0, &[]).unwrap();
        assert_eq!(tr.state.ego().v, 0.0);
        assert_eq!(tr.state.ego().s, 0.0);
    }

    #[test]
    fn coincident_vehicles_collide() {
        let sc = scenario();
        let st = WorldState {
            step: 0,
            vehicles: vec![
                Vehicle { role: Role::Ego, s: 30.0, v: 0.0, beta: None, finished: false },
                Vehicle { role: Role::Social, s: 80.0, v: 0.0, beta: Some(1.0), finished: false },
                Vehicle { role: Role::Social, s: 0.0, v: 0.0, beta: Some(1.0), finished: false },
            ],
            outcome: None,
        };
        let tr = step(&sc, &st, 2, &[Some(2), Some(2)]).unwrap();
        assert_eq!(tr.outcome, Some(Outcome::Collision));
        assert_eq!(tr.ego_reward, -2.0 - 0.01);
        assert!(matches!(step(&sc, &tr.state, 2, &[Some(2), Some(2)]), Err(Error::TerminalState)));
    }

    #[test]
    fn full_throttle_without_traffic_succeeds_at_step_42() {
        let cfg = ScenarioConfig { n_social: 0, ..Default::default() };
        // Brute-force kinematics, independent of the simulator.
        let (mut v, mut s, mut k) = (0.0f64, 0.0f64, 0);
        while s < 60.0 {
            v = (v + 2.0 * 0.2f64).min(10.0);
            s += v * 0.2;
            k += 1;
        }
        assert_eq!(k, 42);
        let sc = Scenario::new(cfg).unwrap();
        let ep = rollout(&sc, &FixedAction(3), &FixedAction(0), &[], 0, 0.99).unwrap();
        assert_eq!(ep.outcome, Outcome::Success);
        assert_eq!(ep.length, k);
    }

    #[test]
    fn braking_ego_times_out() {
        let sc = scenario();
        let ep = rollout(&sc, &FixedAction(0), &FixedAction(2), &[1.0, 1.0], 3, 0.99).unwrap();
        assert_eq!(ep.outcome, Outcome::Timeout);
        assert_eq!(ep.length, 100);
        assert!(ep.final_state.ego().s == 0.0);
    }

    #[test]
    fn zero_discount_keeps_first_reward() {
        let sc = scenario();
        let ep = rollout(&sc, &FixedAction(3), &FixedAction(3), &[0.0, 0.0], 4, 0.0).unwrap();
        assert_eq!(ep.ego_return, ep.steps[0].ego_reward);
    }

    #[test]
    fn rollout_is_deterministic_and_serializes_identically() {
        let sc = scenario();
        let a = rollout(&sc, &FixedAction(3), &FixedAction(3), &[-1.0, 2.0], 77, 0.99).unwrap();
        let b = rollout(&sc, &FixedAction(3), &FixedAction(3), &[-1.0, 2.0], 77, 0.99).unwrap();
        assert_eq!(a, b);
        let (mut ja, mut jb) = (Vec::new(), Vec::new());
        a.write_jsonl(&mut ja).unwrap();
        b.write_jsonl(&mut jb).unwrap();
        assert_eq!(ja, jb);
        assert_eq!(String::from_utf8(ja).unwrap().lines().count(), a.length + 2);
    }

    #[test]
    fn kinematics_and_outcome_invariants() {
        let sc = scenario();
        for seed in 0..40 {
            let ep = rollout(&sc, &FixedAction((seed % 4) as usize), &FixedAction(3), &[0.0, 1.0], seed, 0.99)
                .unwrap();
            let mut states: Vec<&WorldState> = ep.steps.iter().map(|s| &s.state).collect();
            states.push(&ep.final_state);
            for w in states.windows(2) {
                for (a, b) in w[0].vehicles.iter().zip(&w[1].vehicles) {
                    assert!(b.v >= 0.0 && b.v <= 10.0);
                    assert!(b.s >= a.s);
                    if !a.finished {
                        assert!((b.s - a.s - b.v * 0.2).abs() <= 1e-9);
                    }
                }
            }
            assert!(ep.steps.iter().all(|s| s.state.outcome.is_none()));
            assert_eq!(ep.final_state.outcome, Some(ep.outcome));
            match ep.outcome {
                Outcome::Success => assert!(ep.final_state.ego().s >= 60.0),
                Outcome::Timeout => assert_eq!(ep.length, 100),
                Outcome::Collision => {}
            }
        }
    }

    #[test]
    fn social_reward_signs() {
        let m = SocialRewardModel::default();
        // Low β pays for speed, high β charges for it.
        assert!(m.r_goal(1.0, false) + -1.0 * m.r_speed(1.0) > m.r_goal(1.0, false) + 3.0 * m.r_speed(1.0));
        let prefs: Vec<f64> = [-1.0, 0.0, 1.0, 2.0, 3.0].iter().map(|&b| m.preferred_fraction(b)).collect();
        assert!(prefs.windows(2).all(|w| w[0] > w[1]));
        assert!((prefs[0] - 0.9).abs() < 1e-12 && (prefs[4] - 0.1).abs() < 1e-12);
    }
}
