//! Built-in task archetypes and the task-file loader.

use serde::Deserialize;

use super::geometry::{Polyline, Vec2};
use super::types::{Density, Maneuver, TaskConfig};
use super::SimError;

/// Identifiers of the five built-in tasks: one pretraining scenario and
/// four shifted variants (denser traffic, a roundabout, and the mirrored
/// left turns).
pub const BUILTIN_TASKS: [&str; 5] = [
    "right-turn-moderate",
    "right-turn-dense",
    "roundabout-moderate",
    "left-turn-moderate",
    "left-turn-dense",
];

fn right_turn_route() -> Vec<Vec2> {
    vec![
        Vec2::new(-20.0, -2.0),
        Vec2::new(-6.0, -2.0),
        Vec2::new(-2.0, -2.5),
        Vec2::new(0.5, -4.0),
        Vec2::new(1.8, -7.0),
        Vec2::new(2.0, -12.0),
        Vec2::new(2.0, -22.0),
    ]
}

fn left_turn_route() -> Vec<Vec2> {
    // same approach as the right turn, steering mirrored at the junction
    vec![
        Vec2::new(-20.0, -2.0),
        Vec2::new(-6.0, -2.0),
        Vec2::new(-3.0, -1.5),
        Vec2::new(-2.2, 0.5),
        Vec2::new(-2.0, 4.0),
        Vec2::new(-2.0, 12.0),
        Vec2::new(-2.0, 22.0),
    ]
}

fn roundabout_route() -> Vec<Vec2> {
    vec![
        Vec2::new(-20.0, -2.0),
        Vec2::new(-10.0, -2.0),
        Vec2::new(-6.0, -3.0),
        Vec2::new(-3.0, -5.2),
        Vec2::new(0.0, -6.0),
        Vec2::new(3.0, -5.2),
        Vec2::new(5.2, -3.0),
        Vec2::new(6.0, 0.0),
        Vec2::new(5.2, 3.0),
        Vec2::new(3.0, 5.2),
        Vec2::new(0.0, 6.0),
        Vec2::new(0.0, 12.0),
        Vec2::new(0.0, 22.0),
    ]
}

fn merge_route() -> Vec<Vec2> {
    vec![
        Vec2::new(-20.0, -8.0),
        Vec2::new(-10.0, -5.0),
        Vec2::new(-2.0, -2.5),
        Vec2::new(4.0, -2.0),
        Vec2::new(22.0, -2.0),
    ]
}

/// Scripted-traffic lane centerlines for a maneuver. Vehicles loop along
/// these closed circuits at constant speed.
pub fn traffic_lanes(maneuver: Maneuver) -> Vec<Polyline> {
    let lanes: Vec<Vec<Vec2>> = match maneuver {
        Maneuver::RightTurn => vec![
            // southbound lane the ego merges into
            vec![Vec2::new(2.0, 26.0), Vec2::new(2.0, -26.0)],
            // oncoming westbound lane across the junction
            vec![Vec2::new(26.0, 2.0), Vec2::new(-26.0, 2.0)],
        ],
        Maneuver::LeftTurn => vec![
            // oncoming westbound lane the ego must cross
            vec![Vec2::new(26.0, 2.0), Vec2::new(-26.0, 2.0)],
            // northbound lane the ego merges into
            vec![Vec2::new(-2.0, -26.0), Vec2::new(-2.0, 26.0)],
        ],
        Maneuver::Roundabout => {
            // circulating ring, radius 6, counterclockwise
            let n = 12;
            let mut ring: Vec<Vec2> = (0..=n)
                .map(|i| {
                    let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                    Vec2::new(6.0 * a.cos(), 6.0 * a.sin())
                })
                .collect();
            // close the loop exactly on the first point
            let first = ring[0];
            *ring.last_mut().unwrap() = first;
            vec![ring]
        }
        Maneuver::HighwayMerge => vec![
            // mainline the ramp feeds into
            vec![Vec2::new(-26.0, -2.0), Vec2::new(26.0, -2.0)],
        ],
    };
    lanes
        .into_iter()
        .map(|pts| Polyline::new(pts).expect("builtin lanes are well-formed"))
        .collect()
}

fn builtin(id: &str, maneuver: Maneuver, density: Density, route: Vec<Vec2>) -> TaskConfig {
    let start_dir = route[1].sub(route[0]);
    let heading = start_dir.y.atan2(start_dir.x);
    TaskConfig {
        id: id.to_string(),
        maneuver,
        density,
        start: (route[0].x, route[0].y, heading),
        route,
        step_limit: 200,
        town: "grid-town".to_string(),
        weather: "clear".to_string(),
        spawn_jitter: 0.5,
    }
}

impl TaskConfig {
    /// Look up one of the built-in archetypes by id.
    pub fn builtin(id: &str) -> Result<TaskConfig, SimError> {
        let task = match id {
            "right-turn-moderate" => {
                builtin(id, Maneuver::RightTurn, Density::Moderate, right_turn_route())
            }
            "right-turn-dense" => {
                builtin(id, Maneuver::RightTurn, Density::Dense, right_turn_route())
            }
            "roundabout-moderate" => {
                builtin(id, Maneuver::Roundabout, Density::Moderate, roundabout_route())
            }
            "left-turn-moderate" => {
                builtin(id, Maneuver::LeftTurn, Density::Moderate, left_turn_route())
            }
            "left-turn-dense" => {
                builtin(id, Maneuver::LeftTurn, Density::Dense, left_turn_route())
            }
            "highway-merge-moderate" => {
                builtin(id, Maneuver::HighwayMerge, Density::Moderate, merge_route())
            }
            other => return Err(SimError::UnknownTask(other.to_string())),
        };
        task.validate()?;
        Ok(task)
    }

    /// Parse a task from its on-disk text form. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<TaskConfig, SimError> {
        let file: TaskFile =
            toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        let density = match file.traffic_density.as_str() {
            "moderate" => Density::Moderate,
            "dense" => Density::Dense,
            other => {
                return Err(SimError::Config(format!("unknown traffic_density `{other}`")))
            }
        };
        let name = file.name.to_lowercase();
        let maneuver = if name.contains("left") {
            Maneuver::LeftTurn
        } else if name.contains("roundabout") {
            Maneuver::Roundabout
        } else if name.contains("merge") {
            Maneuver::HighwayMerge
        } else {
            Maneuver::RightTurn
        };
        if file.lane_start_point.len() != 3 {
            return Err(SimError::Config(
                "lane_start_point must be [x, y, heading]".to_string(),
            ));
        }
        let task = TaskConfig {
            id: file.name,
            maneuver,
            density,
            route: file.ego_path.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
            start: (
                file.lane_start_point[0],
                file.lane_start_point[1],
                file.lane_start_point[2],
            ),
            step_limit: file.step_limit,
            town: file.town,
            weather: file.weather,
            spawn_jitter: 0.5,
        };
        task.validate()?;
        Ok(task)
    }
}

/// On-disk task layout, mirroring the scenario listing keys.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    name: String,
    town: String,
    weather: String,
    /// Cosmetic route number from the scenario listing.
    #[allow(dead_code)]
    route: i64,
    lane_start_point: Vec<f64>,
    ego_path: Vec<[f64; 2]>,
    traffic_density: String,
    step_limit: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_validate() {
        for id in BUILTIN_TASKS {
            let t = TaskConfig::builtin(id).unwrap();
            assert_eq!(t.id, id);
            assert!(t.validate().is_ok());
            assert!(!traffic_lanes(t.maneuver).is_empty());
        }
        assert!(matches!(
            TaskConfig::builtin("no-such-task"),
            Err(SimError::UnknownTask(_))
        ));
    }

    #[test]
    fn left_turn_mirrors_the_right_turn_exit_side() {
        let right = TaskConfig::builtin("right-turn-moderate").unwrap();
        let left = TaskConfig::builtin("left-turn-moderate").unwrap();
        // same approach, opposite exit direction
        assert_eq!(right.route[0], left.route[0]);
        assert!(right.route.last().unwrap().y < 0.0);
        assert!(left.route.last().unwrap().y > 0.0);
    }

    #[test]
    fn toml_round_trip_and_unknown_key_rejection() {
        let good = r#"
name = "left-turn-custom"
town = "town05"
weather = "clear"
route = 2
lane_start_point = [-20.0, -2.0, 0.0]
ego_path = [[-20.0, -2.0], [-6.0, -2.0], [-2.0, 4.0]]
traffic_density = "dense"
step_limit = 120
"#;
        let t = TaskConfig::from_toml_str(good).unwrap();
        assert_eq!(t.maneuver, Maneuver::LeftTurn);
        assert_eq!(t.density, Density::Dense);
        assert_eq!(t.route.len(), 3);
        assert_eq!(t.step_limit, 120);

        let bad = good.replace("route = 2", "route = 2\nturbo_mode = true");
        match TaskConfig::from_toml_str(&bad) {
            Err(SimError::Config(msg)) => assert!(msg.contains("turbo_mode"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn bad_density_and_bad_start_rejected() {
        let text = r#"
name = "x"
town = "t"
weather = "w"
route = 0
lane_start_point = [-20.0, -2.0, 0.0]
ego_path = [[-20.0, -2.0], [0.0, 0.0]]
traffic_density = "jammed"
step_limit = 10
"#;
        assert!(matches!(TaskConfig::from_toml_str(text), Err(SimError::Config(_))));
        let text2 = text
            .replace("jammed", "moderate")
            .replace("[-20.0, -2.0, 0.0]", "[-20.0, -2.0]");
        assert!(matches!(TaskConfig::from_toml_str(&text2), Err(SimError::Config(_))));
    }
}
