//! Probabilistic collision risk.
//!
//! Static risk is the worst occupancy probability under the robot's
//! footprint disc. Each moving obstacle contributes a contact-or-Gaussian
//! risk on the clearance between the two discs, and independent obstacles
//! combine through the product of their non-collision probabilities.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Cell, DynamicObstacle, StaticMap, Vec2};
use crate::kinematics::{propagate, Control, State};

/// Parameters of the per-obstacle risk field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskModel {
    /// Width of the Gaussian fall-off beyond contact, meters.
    pub sigma: f64,
    /// Growth of prediction uncertainty with look-ahead, m/s. Added to the
    /// contact radius for predicted (not yet observed) times.
    pub uncertainty_rate: f64,
    /// Extra growth per unit of the obstacle's own speed. A mover that
    /// reverses right after its last observation ends up `2 |v| t` away from
    /// its constant-velocity forecast.
    pub speed_gain: f64,
    /// Upper bound of the prediction uncertainty margin, meters.
    pub uncertainty_cap: f64,
}

impl Default for RiskModel {
    fn default() -> Self {
        RiskModel {
            sigma: 0.3,
            uncertainty_rate: 1.0,
            speed_gain: 0.0,
            uncertainty_cap: 0.5,
        }
    }
}

impl RiskModel {
    /// Plain contact-plus-Gaussian model with no prediction margin.
    pub fn exact(sigma: f64) -> Self {
        RiskModel {
            sigma,
            uncertainty_rate: 0.0,
            speed_gain: 0.0,
            uncertainty_cap: 0.0,
        }
    }

    fn margin(&self, lookahead: f64, speed: f64) -> f64 {
        if lookahead <= 0.0 {
            0.0
        } else {
            ((self.uncertainty_rate + self.speed_gain * speed) * lookahead).min(self.uncertainty_cap)
        }
    }
}

/// Risk from one obstacle at center distance `d` with combined radius `r`.
pub fn obstacle_risk(d: f64, r: f64, sigma: f64) -> f64 {
    if d <= r {
        1.0
    } else {
        let gap = d - r;
        (-(gap * gap) / (2.0 * sigma * sigma)).exp()
    }
}

/// `P_static + (1 - P_static) * P_moving`.
pub fn combine_risk(p_static: f64, p_moving: f64) -> f64 {
    p_static + (1.0 - p_static) * p_moving
}

fn union_of_independent(risks: impl IntoIterator<Item = f64>) -> f64 {
    1.0 - risks.into_iter().fold(1.0, |acc, p| acc * (1.0 - p))
}

/// Worst occupancy probability over the cells the footprint disc touches.
/// Any part of the disc off the map counts as certain collision.
pub fn static_collision_prob(map: &StaticMap, position: Vec2, footprint_radius: f64) -> f64 {
    if !(position.x.is_finite() && position.y.is_finite()) {
        return 1.0;
    }
    let r = footprint_radius.max(0.0);
    if r == 0.0 {
        return match map.cell_of(position) {
            Some(c) => map.prob(c),
            None => 1.0,
        };
    }
    let ext = map.extent();
    if position.x - r < 0.0 || position.y - r < 0.0 || position.x + r > ext.x || position.y + r > ext.y {
        return 1.0;
    }
    let res = map.resolution();
    let x0 = ((position.x - r) / res).floor() as i32;
    let x1 = ((position.x + r) / res).floor() as i32;
    let y0 = ((position.y - r) / res).floor() as i32;
    let y1 = ((position.y + r) / res).floor() as i32;
    let mut worst: f64 = 0.0;
    for cy in y0..=y1 {
        for cx in x0..=x1 {
            let c = Cell::new(cx, cy);
            let p = map.prob(c);
            if p <= worst {
                continue;
            }
            // Closest point of the cell rectangle to the disc center.
            let qx = position.x.clamp(cx as f64 * res, (cx + 1) as f64 * res);
            let qy = position.y.clamp(cy as f64 * res, (cy + 1) as f64 * res);
            let d2 = (qx - position.x).powi(2) + (qy - position.y).powi(2);
            if d2 < r * r {
                worst = p;
                if worst >= 1.0 {
                    return 1.0;
                }
            }
        }
    }
    worst
}

/// Combined risk from every obstacle at time `t`, using each obstacle's
/// constant-velocity prediction from its observation cursor.
pub fn moving_collision_prob(
    obstacles: &[DynamicObstacle],
    position: Vec2,
    footprint_radius: f64,
    t: f64,
    model: &RiskModel,
) -> f64 {
    union_of_independent(obstacles.iter().map(|ob| match ob.extrapolation(t) {
        Ok((p, v)) => {
            let r = footprint_radius + ob.radius + model.margin(t - ob.observed_up_to(), v.norm());
            obstacle_risk((p - position).norm(), r, model.sigma)
        }
        Err(_) => 0.0,
    }))
}

pub fn collision_prob(
    map: &StaticMap,
    obstacles: &[DynamicObstacle],
    position: Vec2,
    footprint_radius: f64,
    t: f64,
    model: &RiskModel,
) -> f64 {
    let ps = static_collision_prob(map, position, footprint_radius);
    if ps >= 1.0 {
        return 1.0;
    }
    combine_risk(ps, moving_collision_prob(obstacles, position, footprint_radius, t, model))
}

/// Cells crossed by the segment `a -> b` (grid traversal; both cells are
/// included where the segment passes exactly through a grid corner).
fn cells_on_segment(map: &StaticMap, a: Vec2, b: Vec2) -> Vec<Cell> {
    let res = map.resolution();
    let (x0, y0) = (a.x / res, a.y / res);
    let (x1, y1) = (b.x / res, b.y / res);
    let (mut cx, mut cy) = (x0.floor() as i32, y0.floor() as i32);
    let (ex, ey) = (x1.floor() as i32, y1.floor() as i32);
    let (dx, dy) = (x1 - x0, y1 - y0);
    let step_x = if dx > 0.0 { 1 } else { -1 };
    let step_y = if dy > 0.0 { 1 } else { -1 };
    let t_dx = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_dy = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_x = if dx > 0.0 {
        (cx as f64 + 1.0 - x0) / dx
    } else if dx < 0.0 {
        (x0 - cx as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_y = if dy > 0.0 {
        (cy as f64 + 1.0 - y0) / dy
    } else if dy < 0.0 {
        (y0 - cy as f64) / -dy
    } else {
        f64::INFINITY
    };
    let mut out = vec![Cell::new(cx, cy)];
    let budget = (ex - cx).unsigned_abs() + (ey - cy).unsigned_abs() + 2;
    for _ in 0..budget {
        if (cx == ex && cy == ey) || (t_x > 1.0 && t_y > 1.0) {
            break;
        }
        if t_x < t_y {
            cx += step_x;
            t_x += t_dx;
        } else if t_y < t_x {
            cy += step_y;
            t_y += t_dy;
        } else {
            out.push(Cell::new(cx + step_x, cy));
            out.push(Cell::new(cx, cy + step_y));
            cx += step_x;
            cy += step_y;
            t_x += t_dx;
            t_y += t_dy;
        }
        out.push(Cell::new(cx, cy));
    }
    out
}

/// Whether the straight segment `a -> b`, swept by a disc of `clearance`,
/// stays off static obstacles. With zero clearance every crossed cell is
/// tested exactly.
pub fn segment_static_free(map: &StaticMap, a: Vec2, b: Vec2, clearance: f64) -> bool {
    if clearance <= 0.0 {
        if map.cell_of(a).is_none() || map.cell_of(b).is_none() {
            return false;
        }
        return cells_on_segment(map, a, b).into_iter().all(|c| map.is_free(c));
    }
    let len = (b - a).norm();
    let spacing = 0.5 * clearance.min(map.resolution());
    let n = (len / spacing).ceil().max(1.0) as usize;
    (0..=n).all(|i| {
        let p = a + (b - a) * (i as f64 / n as f64);
        static_collision_prob(map, p, clearance) < 0.5
    })
}

#[derive(Debug, Clone)]
struct Forecast {
    anchor: Vec2,
    velocity: Vec2,
    anchor_t: f64,
    observed_up_to: f64,
    radius: f64,
}

/// Frozen view of the environment for one planning cycle: the static map
/// plus constant-velocity forecasts of every observed obstacle over the
/// prediction horizon. Timestamps past the horizon carry static risk only.
#[derive(Debug, Clone)]
pub struct WorldSnapshot {
    map: Arc<StaticMap>,
    forecasts: Vec<Forecast>,
    t_now: f64,
    horizon_end: f64,
    footprint: f64,
    model: RiskModel,
}

impl WorldSnapshot {
    pub fn new(
        map: Arc<StaticMap>,
        obstacles: &[DynamicObstacle],
        t_now: f64,
        horizon: f64,
        footprint: f64,
        model: RiskModel,
    ) -> Self {
        let forecasts = obstacles
            .iter()
            .filter_map(|ob| {
                ob.extrapolation(t_now).ok().map(|(anchor, velocity)| Forecast {
                    anchor,
                    velocity,
                    anchor_t: t_now,
                    observed_up_to: ob.observed_up_to(),
                    radius: ob.radius,
                })
            })
            .collect();
        WorldSnapshot {
            map,
            forecasts,
            t_now,
            horizon_end: t_now + horizon,
            footprint,
            model,
        }
    }

    pub fn map(&self) -> &StaticMap {
        &self.map
    }

    pub fn shared_map(&self) -> Arc<StaticMap> {
        Arc::clone(&self.map)
    }

    pub fn footprint(&self) -> f64 {
        self.footprint
    }

    pub fn t_now(&self) -> f64 {
        self.t_now
    }

    /// Predicted obstacle centers at `t` (for plotting and tests).
    pub fn predicted_positions(&self, t: f64) -> Vec<Vec2> {
        self.forecasts
            .iter()
            .map(|f| f.anchor + f.velocity * (t - f.anchor_t))
            .collect()
    }

    pub fn moving_prob(&self, position: Vec2, t: f64) -> f64 {
        if t > self.horizon_end + 1e-9 {
            return 0.0;
        }
        union_of_independent(self.forecasts.iter().map(|f| {
            let p = f.anchor + f.velocity * (t - f.anchor_t);
            let r = self.footprint + f.radius + self.model.margin(t - f.observed_up_to, f.velocity.norm());
            obstacle_risk((p - position).norm(), r, self.model.sigma)
        }))
    }

    /// Smallest predicted gap between the footprint and any obstacle disc at
    /// `t`, less the uncertainty margin; infinite when nothing is forecast.
    pub fn predicted_clearance(&self, position: Vec2, t: f64) -> f64 {
        self.forecasts
            .iter()
            .map(|f| {
                let p = f.anchor + f.velocity * (t - f.anchor_t);
                let margin = self.model.margin(t - f.observed_up_to, f.velocity.norm());
                (p - position).norm() - self.footprint - f.radius - margin
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn static_prob(&self, position: Vec2) -> f64 {
        static_collision_prob(&self.map, position, self.footprint)
    }

    pub fn collision_prob(&self, position: Vec2, t: f64) -> f64 {
        let ps = self.static_prob(position);
        if ps >= 1.0 {
            return 1.0;
        }
        combine_risk(ps, self.moving_prob(position, t))
    }

    /// Worst static risk along the arc of `from` under `u` for `dt`, sampled
    /// at half-cell spacing and excluding the start point.
    pub fn arc_static_prob(&self, from: &State, u: Control, dt: f64) -> f64 {
        let arc = u.v.abs() * dt;
        let spacing = 0.5 * self.map.resolution();
        let n = (arc / spacing).ceil().max(1.0) as usize;
        let mut ps: f64 = 0.0;
        for i in 1..=n {
            let s = propagate(from, u, dt * i as f64 / n as f64);
            ps = ps.max(self.static_prob(s.position()));
            if ps >= 1.0 {
                return 1.0;
            }
        }
        ps
    }

    /// Risk of driving `from` under `u` for `dt`, arriving at `t_end`:
    /// worst static risk along the arc combined with the moving risk at arrival.
    pub fn transition_risk(&self, from: &State, u: Control, dt: f64, t_end: f64) -> f64 {
        let ps = self.arc_static_prob(from, u, dt);
        if ps >= 1.0 {
            return 1.0;
        }
        let end = propagate(from, u, dt);
        combine_risk(ps, self.moving_prob(end.position(), t_end))
    }
}
