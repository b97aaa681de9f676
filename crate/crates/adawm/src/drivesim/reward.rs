//! Six-term reward and time-to-collision computation.

use super::geometry::{wrap_angle, Polyline, Vec2};
use super::types::{RewardBreakdown, RewardWeights, VehicleState, TTC_MAX};

/// Lateral half-width of the corridor ahead of the ego that counts as "in
/// my lane" for TTC and lead-gap purposes.
pub const CORRIDOR_HALF_WIDTH: f64 = 2.0;
/// Lead gap below which extra speed is penalized.
pub const CLOSE_GAP_M: f64 = 5.0;
/// Speed above which the velocity term penalizes.
pub const SPEED_LIMIT: f64 = 5.0;

/// Everything the reward needs to see about one step.
pub struct SceneView<'a> {
    pub ego: &'a VehicleState,
    pub others: &'a [VehicleState],
    pub route: &'a Polyline,
    /// `(acceleration, steering)` applied on the previous step.
    pub prev_action: (f64, f64),
    /// `(acceleration, steering)` applied on this step.
    pub action: (f64, f64),
    pub collision: bool,
}

/// Time to collision, seconds: minimum over vehicles ahead of the ego
/// within its lane corridor and closing, of bumper distance over closing
/// speed. `TTC_MAX` when nothing qualifies.
pub fn ttc(ego: &VehicleState, others: &[VehicleState]) -> f64 {
    let dir = Vec2::from_heading(ego.heading);
    let mut best = TTC_MAX;
    for other in others {
        let rel = other.pos.sub(ego.pos);
        let ahead = rel.dot(dir);
        let lateral = dir.cross(rel).abs();
        if ahead <= 0.0 || lateral > CORRIDOR_HALF_WIDTH {
            continue;
        }
        let closing = ego.velocity().dot(dir) - other.velocity().dot(dir);
        if closing <= 1e-9 {
            continue;
        }
        let gap = (ego.length + other.length) / 2.0;
        let t = ((ahead - gap).max(0.0)) / closing;
        best = best.min(t);
    }
    best.clamp(0.0, TTC_MAX)
}

/// Bumper-to-bumper distance to the nearest vehicle ahead in the corridor,
/// regardless of relative speed.
pub fn lead_gap(ego: &VehicleState, others: &[VehicleState]) -> Option<f64> {
    let dir = Vec2::from_heading(ego.heading);
    let mut best: Option<f64> = None;
    for other in others {
        let rel = other.pos.sub(ego.pos);
        let ahead = rel.dot(dir);
        let lateral = dir.cross(rel).abs();
        if ahead <= 0.0 || lateral > CORRIDOR_HALF_WIDTH {
            continue;
        }
        let gap = (ahead - (ego.length + other.length) / 2.0).max(0.0);
        best = Some(best.map_or(gap, |b: f64| b.min(gap)));
    }
    best
}

/// Compute the weighted reward and its unweighted breakdown.
///
/// Terms: safety is the normalized TTC (or -1 on collision); comfort
/// penalizes action jumps; time is a constant -1 per step; velocity
/// penalizes speed beyond the limit plus half the speed when tailgating;
/// orientation penalizes heading error against the route tangent; target
/// penalizes distance to the nearest route waypoint.
pub fn compute_reward(scene: &SceneView<'_>, weights: &RewardWeights) -> (f64, RewardBreakdown) {
    let safety = if scene.collision {
        -1.0
    } else {
        ttc(scene.ego, scene.others).clamp(0.0, TTC_MAX) / TTC_MAX
    };
    let comfort = -(scene.action.0 - scene.prev_action.0).abs()
        - (scene.action.1 - scene.prev_action.1).abs();
    let time = -1.0;
    let mut velocity = -(scene.ego.speed - SPEED_LIMIT).max(0.0);
    if let Some(gap) = lead_gap(scene.ego, scene.others) {
        if gap < CLOSE_GAP_M {
            velocity -= 0.5 * scene.ego.speed;
        }
    }
    let (_, tangent) = scene.route.closest(scene.ego.pos);
    let orientation = -wrap_angle(scene.ego.heading - tangent.y.atan2(tangent.x)).abs();
    let target = -scene.route.nearest_waypoint_dist(scene.ego.pos);
    let breakdown = RewardBreakdown { safety, comfort, time, velocity, orientation, target };
    (breakdown.weighted_total(weights), breakdown)
}
