//! Core simulator data types.

use serde::{Deserialize, Serialize};

use super::geometry::{wrap_angle, Obb, Vec2};
use super::SimError;

/// Integration step in seconds.
pub const DT: f64 = 0.1;
/// Safety-reward cap on time to collision, seconds.
pub const TTC_MAX: f64 = 5.0;
/// Bird's-eye grid edge length in cells.
pub const GRID: usize = 16;
/// Grid cell edge in meters.
pub const CELL_M: f64 = 2.0;
/// Meters the grid extends behind the ego along its heading.
pub const GRID_BACK_M: f64 = 8.0;
/// Number of grid channels: drivable area, route, ego footprint, others.
pub const CHANNELS: usize = 4;
/// Flattened observation length: grid plus the scalar speed.
pub const OBS_LEN: usize = GRID * GRID * CHANNELS + 1;

/// Pose and footprint of one vehicle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VehicleState {
    pub pos: Vec2,
    /// Radians, wrapped to (-pi, pi].
    pub heading: f64,
    /// Meters per second, never negative.
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl VehicleState {
    pub fn new(pos: Vec2, heading: f64, speed: f64, length: f64, width: f64) -> Self {
        Self { pos, heading: wrap_angle(heading), speed: speed.max(0.0), length, width }
    }

    pub fn footprint(&self) -> Obb {
        Obb {
            center: self.pos,
            heading: self.heading,
            half_len: self.length / 2.0,
            half_wid: self.width / 2.0,
        }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_heading(self.heading).scale(self.speed)
    }
}

/// Driving maneuver archetype; decides the surrounding lane layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Maneuver {
    RightTurn,
    LeftTurn,
    Roundabout,
    HighwayMerge,
}

/// Scripted-traffic density level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Moderate,
    Dense,
}

impl Density {
    /// Spawn rate in vehicles per meter of lane.
    pub fn spawn_rate(self) -> f64 {
        match self {
            Density::Moderate => 0.04,
            Density::Dense => 0.10,
        }
    }
}

/// One driving task: scenario geometry plus episode parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskConfig {
    /// Stable identifier, e.g. `right-turn-dense`.
    pub id: String,
    pub maneuver: Maneuver,
    pub density: Density,
    /// Ego route waypoints, at least two, consecutive ones distinct.
    pub route: Vec<Vec2>,
    /// Ego start pose `(x, y, heading)`.
    pub start: (f64, f64, f64),
    pub step_limit: usize,
    /// Cosmetic scenario labels.
    pub town: String,
    pub weather: String,
    /// Half-width of the uniform start-pose jitter (meters for position,
    /// radians for heading, scaled by 0.1).
    pub spawn_jitter: f64,
}

impl TaskConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.route.len() < 2 {
            return Err(SimError::BadRoute("route needs at least two waypoints".into()));
        }
        for w in self.route.windows(2) {
            if w[0].dist(w[1]) <= 1e-9 {
                return Err(SimError::BadRoute(format!(
                    "consecutive duplicate waypoint at ({}, {})",
                    w[0].x, w[0].y
                )));
            }
        }
        if self.step_limit == 0 {
            return Err(SimError::BadRoute("step limit must be positive".into()));
        }
        Ok(())
    }
}

/// Weights of the six reward terms: safety, comfort, time, velocity,
/// orientation, target.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardWeights {
    pub safety: f64,
    pub comfort: f64,
    pub time: f64,
    pub velocity: f64,
    pub orientation: f64,
    pub target: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            safety: 1.0,
            comfort: 0.1,
            time: 0.05,
            velocity: 0.5,
            orientation: 0.3,
            target: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn as_array(&self) -> [f64; 6] {
        [self.safety, self.comfort, self.time, self.velocity, self.orientation, self.target]
    }
}

/// Unweighted values of the six reward terms.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub safety: f64,
    pub comfort: f64,
    pub time: f64,
    pub velocity: f64,
    pub orientation: f64,
    pub target: f64,
}

impl RewardBreakdown {
    pub fn as_array(&self) -> [f64; 6] {
        [self.safety, self.comfort, self.time, self.velocity, self.orientation, self.target]
    }

    pub fn weighted_total(&self, w: &RewardWeights) -> f64 {
        self.as_array().iter().zip(w.as_array()).map(|(c, w)| w * c).sum()
    }
}

/// Ego-centric BEV grid plus scalar speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Row-major `[channel][row][col]`, all entries in `[0, 1]`.
    pub grid: Vec<f64>,
    pub speed: f64,
}

impl Observation {
    /// Flatten to the `OBS_LEN` input vector consumed by the world model.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_LEN);
        v.extend_from_slice(&self.grid);
        v.push(self.speed);
        v
    }
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminationCause {
    Collision,
    Goal,
    Timeout,
}

/// Outcome of one simulator step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub terminated: bool,
    pub cause: Option<TerminationCause>,
    /// Time to collision at this step, seconds, capped at `TTC_MAX`.
    pub ttc: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vehicle_state_normalizes_inputs() {
        let v = VehicleState::new(Vec2::new(0.0, 0.0), 7.0, -1.0, 4.5, 2.0);
        assert!(v.heading > -std::f64::consts::PI && v.heading <= std::f64::consts::PI);
        assert_eq!(v.speed, 0.0);
    }

    #[test]
    fn breakdown_total_matches_dot_product() {
        let b = RewardBreakdown {
            safety: 1.0,
            comfort: -0.5,
            time: -1.0,
            velocity: 0.0,
            orientation: -0.2,
            target: -3.0,
        };
        let w = RewardWeights::default();
        let manual = 1.0 * 1.0 + 0.1 * -0.5 + 0.05 * -1.0 + 0.5 * 0.0 + 0.3 * -0.2 + 0.5 * -3.0;
        assert!((b.weighted_total(&w) - manual).abs() < 1e-15);
    }

    #[test]
    fn dense_spawns_more_than_moderate() {
        assert!(Density::Dense.spawn_rate() > Density::Moderate.spawn_rate());
    }

    #[test]
    fn task_validation_catches_bad_routes() {
        let mut t = TaskConfig {
            id: "t".into(),
            maneuver: Maneuver::RightTurn,
            density: Density::Moderate,
            route: vec![Vec2::new(0.0, 0.0)],
            start: (0.0, 0.0, 0.0),
            step_limit: 100,
            town: "t1".into(),
            weather: "clear".into(),
            spawn_jitter: 0.0,
        };
        assert!(matches!(t.validate(), Err(SimError::BadRoute(_))));
        t.route = vec![Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0)];
        assert!(matches!(t.validate(), Err(SimError::BadRoute(_))));
        t.route = vec![Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0)];
        assert!(t.validate().is_ok());
    }
}
