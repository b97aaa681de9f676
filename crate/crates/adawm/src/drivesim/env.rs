//! The simulator itself: deterministic reset, kinematic stepping, scripted
//! traffic, termination detection, observation rasterization, and policy
//! evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::geometry::{obb_overlap, wrap_angle, Polyline, Vec2};
use super::reward::{compute_reward, ttc, SceneView};
use super::tasks::traffic_lanes;
use super::types::{
    Density, Observation, RewardWeights, StepResult, TaskConfig, TerminationCause, VehicleState,
    CELL_M, CHANNELS, DT, GRID, GRID_BACK_M,
};
use super::{action_space, SimError};

/// Ego wheelbase for the bicycle model, meters.
const WHEELBASE: f64 = 2.8;
/// Vehicle footprint used for every car in the scene.
const CAR_LEN: f64 = 4.5;
const CAR_WID: f64 = 2.0;
/// Distance to the final waypoint that counts as reaching the goal.
const GOAL_RADIUS: f64 = 2.0;
/// Half-width of rasterized corridors: drivable area and route channel.
const DRIVABLE_HALF_WIDTH: f64 = 3.0;
const ROUTE_HALF_WIDTH: f64 = 2.0;
/// Scripted-vehicle speed range, m/s.
const TRAFFIC_SPEED: (f64, f64) = (3.0, 6.0);

#[derive(Debug, Clone)]
struct ScriptedVehicle {
    lane: usize,
    /// Arclength along the lane; wraps at the end.
    s: f64,
    speed: f64,
}

/// One deterministic driving episode factory.
pub struct DriveSim {
    task: TaskConfig,
    weights: RewardWeights,
    route: Polyline,
    lanes: Vec<Polyline>,
    ego: VehicleState,
    traffic: Vec<ScriptedVehicle>,
    prev_action: (f64, f64),
    steps: usize,
    terminated: Option<TerminationCause>,
    started: bool,
}

impl DriveSim {
    pub fn new(task: TaskConfig, weights: RewardWeights) -> Result<Self, SimError> {
        task.validate()?;
        let route = Polyline::new(task.route.clone())
            .ok_or_else(|| SimError::BadRoute("degenerate route polyline".into()))?;
        let lanes = traffic_lanes(task.maneuver);
        let ego = VehicleState::new(
            Vec2::new(task.start.0, task.start.1),
            task.start.2,
            0.0,
            CAR_LEN,
            CAR_WID,
        );
        Ok(Self {
            task,
            weights,
            route,
            lanes,
            ego,
            traffic: Vec::new(),
            prev_action: (0.0, 0.0),
            steps: 0,
            terminated: None,
            started: false,
        })
    }

    pub fn task(&self) -> &TaskConfig {
        &self.task
    }

    pub fn route(&self) -> &Polyline {
        &self.route
    }

    pub fn ego(&self) -> &VehicleState {
        &self.ego
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn terminated(&self) -> Option<TerminationCause> {
        self.terminated
    }

    /// Vehicle count for one lane at the task's density.
    fn lane_vehicle_count(density: Density, lane_len: f64) -> usize {
        ((density.spawn_rate() * lane_len).round() as usize).max(1)
    }

    /// Start a fresh episode. Deterministic in `(task, seed)`.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = self.task.spawn_jitter;
        let (dx, dy, dh) = if j > 0.0 {
            (
                rng.gen_range(-j..j),
                rng.gen_range(-j..j),
                rng.gen_range(-0.1 * j..0.1 * j),
            )
        } else {
            (0.0, 0.0, 0.0)
        };
        self.ego = VehicleState::new(
            Vec2::new(self.task.start.0 + dx, self.task.start.1 + dy),
            self.task.start.2 + dh,
            0.0,
            CAR_LEN,
            CAR_WID,
        );
        self.traffic.clear();
        for (li, lane) in self.lanes.iter().enumerate() {
            let len = lane.length();
            let n = Self::lane_vehicle_count(self.task.density, len);
            for i in 0..n {
                let slot = len / n as f64;
                let s = (i as f64 + 0.5 + rng.gen_range(-0.25..0.25)) * slot;
                let speed = rng.gen_range(TRAFFIC_SPEED.0..TRAFFIC_SPEED.1);
                self.traffic.push(ScriptedVehicle { lane: li, s: s.rem_euclid(len), speed });
            }
        }
        self.prev_action = (0.0, 0.0);
        self.steps = 0;
        self.terminated = None;
        self.started = true;
        self.observe()
    }

    /// Current poses of the scripted vehicles.
    pub fn traffic_states(&self) -> Vec<VehicleState> {
        self.traffic
            .iter()
            .map(|v| {
                let lane = &self.lanes[v.lane];
                let pos = lane.point_at(v.s, true);
                let tan = lane.tangent_at(v.s, true);
                VehicleState::new(pos, tan.y.atan2(tan.x), v.speed, CAR_LEN, CAR_WID)
            })
            .collect()
    }

    /// Advance one step with the indexed action.
    pub fn step(&mut self, action_index: usize) -> Result<StepResult, SimError> {
        if !self.started {
            return Err(SimError::NotReset);
        }
        if let Some(cause) = self.terminated {
            return Err(SimError::EpisodeOver(cause));
        }
        let actions = action_space();
        let (accel, steer) = *actions
            .get(action_index)
            .ok_or(SimError::BadAction { index: action_index, count: actions.len() })?;

        // kinematic bicycle, explicit Euler: pose advances with the current
        // speed, then the speed integrates the acceleration
        let dir = Vec2::from_heading(self.ego.heading);
        let pos = self.ego.pos.add(dir.scale(self.ego.speed * DT));
        let heading =
            wrap_angle(self.ego.heading + self.ego.speed / WHEELBASE * steer.tan() * DT);
        let speed = (self.ego.speed + accel * DT).max(0.0);
        self.ego = VehicleState::new(pos, heading, speed, CAR_LEN, CAR_WID);

        for v in &mut self.traffic {
            let len = self.lanes[v.lane].length();
            v.s = (v.s + v.speed * DT).rem_euclid(len);
        }
        self.steps += 1;

        let others = self.traffic_states();
        let ego_box = self.ego.footprint();
        let collision = others.iter().any(|o| obb_overlap(&ego_box, &o.footprint()));
        let cause = if collision {
            Some(TerminationCause::Collision)
        } else if self.ego.pos.dist(self.route.last()) <= GOAL_RADIUS {
            Some(TerminationCause::Goal)
        } else if self.steps >= self.task.step_limit {
            Some(TerminationCause::Timeout)
        } else {
            None
        };
        self.terminated = cause;

        let scene = SceneView {
            ego: &self.ego,
            others: &others,
            route: &self.route,
            prev_action: self.prev_action,
            action: (accel, steer),
            collision,
        };
        let (reward, breakdown) = compute_reward(&scene, &self.weights);
        let step_ttc = if collision { 0.0 } else { ttc(&self.ego, &others) };
        self.prev_action = (accel, steer);

        Ok(StepResult {
            observation: self.observe(),
            reward,
            breakdown,
            terminated: cause.is_some(),
            cause,
            ttc: step_ttc,
        })
    }

    /// Rasterize the ego-centric BEV grid and read off the speed.
    pub fn observe(&self) -> Observation {
        let mut grid = vec![0.0; GRID * GRID * CHANNELS];
        let others = self.traffic_states();
        let other_boxes: Vec<_> = others.iter().map(|o| o.footprint()).collect();
        let ego_box = self.ego.footprint();
        let (sin, cos) = self.ego.heading.sin_cos();
        for row in 0..GRID {
            // local x: forward axis, from -GRID_BACK_M at row 0
            let lx = -GRID_BACK_M + (row as f64 + 0.5) * CELL_M;
            for col in 0..GRID {
                let ly = -(GRID as f64) * CELL_M / 2.0 + (col as f64 + 0.5) * CELL_M;
                let world = Vec2::new(
                    self.ego.pos.x + cos * lx - sin * ly,
                    self.ego.pos.y + sin * lx + cos * ly,
                );
                let cell = row * GRID + col;
                let (route_d, _) = self.route.closest(world);
                let lane_d = self
                    .lanes
                    .iter()
                    .map(|l| l.closest(world).0)
                    .fold(route_d, f64::min);
                if lane_d <= DRIVABLE_HALF_WIDTH {
                    grid[cell] = 1.0;
                }
                if route_d <= ROUTE_HALF_WIDTH {
                    grid[GRID * GRID + cell] = 1.0;
                }
                if ego_box.contains(world) {
                    grid[2 * GRID * GRID + cell] = 1.0;
                }
                if other_boxes.iter().any(|b| b.contains(world)) {
                    grid[3 * GRID * GRID + cell] = 1.0;
                }
            }
        }
        Observation { grid, speed: self.ego.speed }
    }
}

/// Metrics from a batch of evaluation episodes.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct EvalResult {
    /// Mean per-step TTC over all steps of all episodes.
    pub mean_ttc: f64,
    /// Fraction of episodes that reached the goal without a collision.
    pub success_rate: f64,
}

/// Roll out `episodes` episodes of `policy` on `task` and aggregate
/// success rate and mean TTC. Episode `i` uses seed `seed + i`.
pub fn evaluate_policy<F>(
    mut policy: F,
    task: &TaskConfig,
    weights: &RewardWeights,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult, SimError>
where
    F: FnMut(&Observation, &DriveSim) -> usize,
{
    if episodes == 0 {
        return Err(SimError::NoEpisodes);
    }
    let mut successes = 0usize;
    let mut ttc_sum = 0.0;
    let mut ttc_count = 0usize;
    for e in 0..episodes {
        let mut sim = DriveSim::new(task.clone(), *weights)?;
        let mut obs = sim.reset(seed.wrapping_add(e as u64));
        loop {
            let a = policy(&obs, &sim);
            let res = sim.step(a)?;
            ttc_sum += res.ttc;
            ttc_count += 1;
            if res.terminated {
                if res.cause == Some(TerminationCause::Goal) {
                    successes += 1;
                }
                break;
            }
            obs = res.observation;
        }
    }
    Ok(EvalResult {
        mean_ttc: ttc_sum / ttc_count as f64,
        success_rate: successes as f64 / episodes as f64,
    })
}

/// A scripted route follower: proportional steering toward a lookahead
/// point and a speed band controller. Used for smoke tests and to gather
/// on-route experience.
pub fn route_follower_action(sim: &DriveSim, target_speed: f64) -> usize {
    let actions = action_space();
    let ego = sim.ego();
    let (_, _, s) = sim.route().closest_full(ego.pos);
    let look = sim.route().point_at(s + 4.0, false);
    let to_target = look.sub(ego.pos);
    let desired = wrap_angle(to_target.y.atan2(to_target.x) - ego.heading);
    let steer_goal = (2.0 * desired).clamp(-0.6, 0.6);
    let accel_goal = if ego.speed < target_speed - 0.5 {
        2.0
    } else if ego.speed > target_speed + 0.5 {
        -2.0
    } else {
        0.0
    };
    let mut best = 0;
    let mut best_cost = f64::INFINITY;
    for (i, (a, st)) in actions.iter().enumerate() {
        let cost = (a - accel_goal).abs() + 3.0 * (st - steer_goal).abs();
        if cost < best_cost {
            best_cost = cost;
            best = i;
        }
    }
    best
}

/// Route follower with a gap-acceptance rule. Outside the swept zone of
/// the scripted lanes it stops whenever any vehicle's straight-line
/// forecast passes near the ego's along-route forecast; once inside the
/// zone it commits and clears it, braking only for same-corridor threats.
/// A much stronger scaffold than [`route_follower_action`] at junctions,
/// where crossing traffic never enters the ego's forward corridor.
pub fn yielding_follower_action(sim: &DriveSim, target_speed: f64) -> usize {
    /// Forecast horizon, seconds, and the distance treated as a conflict.
    const FORECAST_S: f64 = 4.0;
    const CONFLICT_M: f64 = 3.4;
    /// Lateral reach of a scripted lane: stopping closer than this to a
    /// lane centerline leaves the ego inside passing traffic.
    const LANE_ZONE_M: f64 = 3.5;

    let ego = sim.ego();
    let others = sim.traffic_states();
    let in_zone = sim.lanes.iter().any(|lane| lane.closest(ego.pos).0 < LANE_ZONE_M);
    if in_zone {
        let t = ttc(ego, &others);
        return route_follower_action(sim, if t < 2.0 { 0.0 } else { target_speed });
    }
    let (_, _, s0) = sim.route().closest_full(ego.pos);
    let steps = (FORECAST_S / DT) as usize;
    for other in &others {
        for k in 1..=steps {
            let t = DT * k as f64;
            let ego_ahead = sim.route().point_at(s0 + target_speed * t, false);
            let other_ahead = other.pos.add(other.velocity().scale(t));
            if ego_ahead.dist(other_ahead) < CONFLICT_M {
                return route_follower_action(sim, 0.0);
            }
        }
    }
    route_follower_action(sim, target_speed)
}
