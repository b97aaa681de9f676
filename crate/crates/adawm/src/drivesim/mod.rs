//! A deterministic 2D kinematic driving simulator: bird's-eye-view grid
//! observations, a 15-way discrete action set, a six-term shaped reward,
//! scripted traffic, and TTC / success-rate metrics.

pub mod env;
pub mod geometry;
pub mod reward;
pub mod tasks;
pub mod types;

pub use env::{
    evaluate_policy, route_follower_action, yielding_follower_action, DriveSim, EvalResult,
};
pub use geometry::{obb_overlap, wrap_angle, Obb, Polyline, Vec2};
pub use reward::{compute_reward, lead_gap, ttc, SceneView};
pub use tasks::{traffic_lanes, BUILTIN_TASKS};
pub use types::{
    Density, Maneuver, Observation, RewardBreakdown, RewardWeights, StepResult, TaskConfig,
    TerminationCause, VehicleState, DT, OBS_LEN, TTC_MAX,
};

use thiserror::Error;

/// Simulator failure modes.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("malformed route: {0}")]
    BadRoute(String),
    #[error("unknown built-in task `{0}`")]
    UnknownTask(String),
    #[error("task config error: {0}")]
    Config(String),
    #[error("action index {index} out of range for {count} actions")]
    BadAction { index: usize, count: usize },
    #[error("episode already terminated ({0:?}); call reset first")]
    EpisodeOver(TerminationCause),
    #[error("simulator must be reset before stepping")]
    NotReset,
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
}

/// The discrete action set: the Cartesian product of accelerations
/// `{-2, 0, 2}` m/s^2 and steering angles `{-0.6, -0.2, 0, 0.2, 0.6}` rad,
/// acceleration-major.
pub fn action_space() -> &'static [(f64, f64)] {
    const ACCELS: [f64; 3] = [-2.0, 0.0, 2.0];
    const STEERS: [f64; 5] = [-0.6, -0.2, 0.0, 0.2, 0.6];
    static SPACE: std::sync::OnceLock<Vec<(f64, f64)>> = std::sync::OnceLock::new();
    SPACE.get_or_init(|| {
        ACCELS
            .iter()
            .flat_map(|&a| STEERS.iter().map(move |&s| (a, s)))
            .collect()
    })
}

/// Number of discrete actions.
pub const N_ACTIONS: usize = 15;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_space_layout() {
        let acts = action_space();
        assert_eq!(acts.len(), N_ACTIONS);
        assert_eq!(acts[0], (-2.0, -0.6));
        assert_eq!(acts[14], (2.0, 0.6));
        assert_eq!(acts[7], (0.0, 0.0)); // middle of the grid
        // acceleration-major: steering cycles fastest
        assert_eq!(acts[1], (-2.0, -0.2));
        assert_eq!(acts[5], (0.0, -0.6));
    }
}
