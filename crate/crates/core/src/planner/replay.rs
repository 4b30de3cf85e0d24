//! Post-hoc safety check of an executed trajectory against the obstacles'
//! ground-truth motion.

use serde::Serialize;

use crate::timetree::Trajectory;
use crate::world::{combine_risk, obstacle_risk, static_collision_prob, DynamicObstacle, StaticMap};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub max_risk: f64,
    /// `(point index, risk)` for every point above the threshold.
    pub violations: Vec<(usize, f64)>,
    /// `(point index, obstacle id)` for every footprint/obstacle overlap.
    pub overlaps: Vec<(usize, String)>,
}

impl ReplayReport {
    pub fn is_safe(&self) -> bool {
        self.violations.is_empty() && self.overlaps.is_empty()
    }
}

/// Re-evaluate every executed point at its timestamp with exact obstacle
/// positions and no prediction margin.
pub fn safety_replay(
    map: &StaticMap,
    obstacles: &[DynamicObstacle],
    trajectory: &Trajectory,
    robot_radius: f64,
    sigma: f64,
    p_max: f64,
) -> ReplayReport {
    let mut report = ReplayReport {
        max_risk: 0.0,
        violations: Vec::new(),
        overlaps: Vec::new(),
    };
    for (i, pt) in trajectory.points.iter().enumerate() {
        let p = pt.state().position();
        let mut free = 1.0;
        for ob in obstacles {
            let d = (ob.true_position(pt.t) - p).norm();
            let r = robot_radius + ob.radius;
            if d < r {
                report.overlaps.push((i, ob.id.clone()));
            }
            free *= 1.0 - obstacle_risk(d, r, sigma);
        }
        let risk = combine_risk(static_collision_prob(map, p, robot_radius), 1.0 - free);
        report.max_risk = report.max_risk.max(risk);
        if risk > p_max {
            report.violations.push((i, risk));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{Control, State};
    use crate::timetree::TrajectoryPoint;
    use crate::world::ObstacleSample;

    #[test]
    fn flags_overlap_with_true_motion() {
        let map = StaticMap::empty(50, 50, 0.1).unwrap();
        let samples = (0..5)
            .map(|k| ObstacleSample {
                t: k as f64,
                position: crate::world::Vec2::new(1.0 + k as f64, 2.5),
            })
            .collect();
        let ob = DynamicObstacle::new("m", 0.2, samples).unwrap();
        let pts = vec![
            TrajectoryPoint::new(State::new(2.5, 0.5, 0.0), Control::ZERO, 0.0),
            TrajectoryPoint::new(State::new(3.0, 2.6, 0.0), Control::ZERO, 2.0),
        ];
        let traj = Trajectory::from_points(pts, 2.0);
        let r = safety_replay(&map, &[ob], &traj, 0.2, 0.3, 0.1);
        assert_eq!(r.overlaps, vec![(1, "m".to_string())]);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].0, 1);
        assert_eq!(r.max_risk, 1.0);
    }
}
