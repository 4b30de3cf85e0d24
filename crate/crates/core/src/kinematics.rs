//! Unicycle robot model: state, bounded controls, exact arc integration and
//! the distance-plus-heading transition cost.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::world::Vec2;

/// Wrap an angle into `[-pi, pi)`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r >= PI {
        -PI
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        State {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn from_position(p: Vec2, theta: f64) -> Self {
        State::new(p.x, p.y, theta)
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn heading(&self) -> Vec2 {
        Vec2::new(self.theta.cos(), self.theta.sin())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Control {
    pub v: f64,
    pub w: f64,
}

impl Control {
    pub const ZERO: Control = Control { v: 0.0, w: 0.0 };

    pub fn new(v: f64, w: f64) -> Self {
        Control { v, w }
    }
}

/// Control bounds and the per-step reachable set around the parent control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlLimits {
    pub v_max: f64,
    /// Lowest admissible linear speed (0 forbids reversing).
    pub v_min: f64,
    pub w_max: f64,
    pub a_v: f64,
    pub a_w: f64,
    pub branching: usize,
}

impl Default for ControlLimits {
    fn default() -> Self {
        ControlLimits {
            v_max: 1.0,
            v_min: -1.0,
            w_max: 1.0,
            a_v: 0.5,
            a_w: 1.0,
            branching: 6,
        }
    }
}

impl ControlLimits {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_max > 0.0 && self.w_max > 0.0) {
            return Err("v_max and w_max must be > 0".into());
        }
        if !(self.a_v >= 0.0 && self.a_w >= 0.0) {
            return Err("a_v and a_w must be >= 0".into());
        }
        if self.v_min > self.v_max || self.v_min < -self.v_max {
            return Err("v_min must lie in [-v_max, v_max]".into());
        }
        if self.branching == 0 {
            return Err("branching must be >= 1".into());
        }
        Ok(())
    }

    pub fn admits(&self, u: Control) -> bool {
        u.v >= self.v_min - 1e-12 && u.v <= self.v_max + 1e-12 && u.w.abs() <= self.w_max + 1e-12
    }
}

/// Drive `s` under constant `u` for `dt` along the exact unicycle arc.
pub fn propagate(s: &State, u: Control, dt: f64) -> State {
    let turn = u.w * dt;
    if u.w.abs() < 1e-9 {
        let d = u.v * dt;
        return State::new(s.x + d * s.theta.cos(), s.y + d * s.theta.sin(), s.theta);
    }
    // Chord of the arc: length v*dt*sinc(turn/2) along the mid-arc heading.
    let half = 0.5 * turn;
    let chord = u.v * dt * (half.sin() / half);
    let mid = s.theta + half;
    State::new(s.x + chord * mid.cos(), s.y + chord * mid.sin(), s.theta + turn)
}

/// Arc length travelled under `u` for `dt`.
pub fn arc_length(u: Control, dt: f64) -> f64 {
    u.v.abs() * dt
}

/// `branching` controls drawn uniformly from the box around `parent`,
/// clipped to the global bounds.
pub fn reachable_controls<R: Rng + ?Sized>(parent: Control, limits: &ControlLimits, rng: &mut R) -> Vec<Control> {
    let v_lo = (parent.v - limits.a_v).max(limits.v_min);
    let v_hi = (parent.v + limits.a_v).min(limits.v_max).max(v_lo);
    let w_lo = (parent.w - limits.a_w).max(-limits.w_max);
    let w_hi = (parent.w + limits.a_w).min(limits.w_max).max(w_lo);
    (0..limits.branching)
        .map(|_| {
            let v = v_lo + (v_hi - v_lo) * rng.gen::<f64>();
            let w = w_lo + (w_hi - w_lo) * rng.gen::<f64>();
            Control::new(v, w)
        })
        .collect()
}

/// Distance/heading weights of the transition cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { w1: 1.0, w2: 0.5 }
    }
}

/// Effort to go from `from` (moving with velocity `velocity`) to `to`:
/// `w1 * distance + w2 * angle(velocity, to - from)`.
///
/// A zero velocity falls back to the heading of `from`; coincident points
/// have no angular term.
pub fn cost(from: &State, velocity: Vec2, to: Vec2, weights: CostWeights) -> f64 {
    let delta = to - from.position();
    let dist = delta.norm();
    let angle = if dist == 0.0 {
        0.0
    } else {
        let dir = if velocity.norm() == 0.0 { from.heading() } else { velocity.normalize() };
        (dir.dot(&delta) / dist).clamp(-1.0, 1.0).acos()
    };
    weights.w1 * dist + weights.w2 * angle
}

/// Velocity vector of a robot at `s` driving with `u`.
pub fn velocity_of(s: &State, u: Control) -> Vec2 {
    s.heading() * u.v
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn euler(s: &State, u: Control, dt: f64, n: usize) -> State {
        let h = dt / n as f64;
        let (mut x, mut y, mut th) = (s.x, s.y, s.theta);
        for _ in 0..n {
            x += u.v * th.cos() * h;
            y += u.v * th.sin() * h;
            th += u.w * h;
        }
        State::new(x, y, th)
    }

    fn close(a: &State, b: &State, tol: f64) -> bool {
        (a.x - b.x).abs() < tol && (a.y - b.y).abs() < tol && normalize_angle(a.theta - b.theta).abs() < tol
    }

    #[test]
    fn straight_and_rotation() {
        let s = State::new(0.0, 0.0, 0.0);
        assert_eq!(propagate(&s, Control::new(1.0, 0.0), 0.5), State::new(0.5, 0.0, 0.0));
        let r = propagate(&s, Control::new(0.0, FRAC_PI_2), 1.0);
        assert!(close(&r, &State::new(0.0, 0.0, FRAC_PI_2), 1e-12));
    }

    #[test]
    fn quarter_arc_matches_euler() {
        let s = State::new(0.0, 0.0, 0.0);
        let u = Control::new(FRAC_PI_2, FRAC_PI_2);
        let exact = propagate(&s, u, 1.0);
        assert!(close(&exact, &State::new(1.0, 1.0, FRAC_PI_2), 1e-12));
        assert!(close(&exact, &euler(&s, u, 1.0, 10_000), 1e-4));
    }

    #[test]
    fn angle_normalization_range() {
        for a in [-10.0, -PI, -PI + 1e-15, 0.0, PI, 3.0 * PI, 1e-17, -1e-17] {
            let n = normalize_angle(a);
            assert!((-PI..PI).contains(&n), "{a} -> {n}");
        }
        assert_eq!(normalize_angle(PI), -PI);
    }

    #[test]
    fn degenerate_box_repeats_parent() {
        let limits = ControlLimits { a_v: 0.0, a_w: 0.0, ..Default::default() };
        let parent = Control::new(0.4, -0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(reachable_controls(parent, &limits, &mut rng).iter().all(|&u| u == parent));
    }

    #[test]
    fn candidates_are_clamped() {
        let limits = ControlLimits { branching: 200, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = reachable_controls(Control::new(limits.v_max, limits.w_max), &limits, &mut rng);
        assert!(out.iter().all(|u| u.v <= limits.v_max && u.w <= limits.w_max && limits.admits(*u)));
    }

    #[test]
    fn candidate_mean_near_box_center() {
        let limits = ControlLimits { branching: 1000, a_v: 0.3, a_w: 0.4, ..Default::default() };
        let parent = Control::new(0.5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = reachable_controls(parent, &limits, &mut rng);
        let n = out.len() as f64;
        let mv = out.iter().map(|u| u.v).sum::<f64>() / n;
        let mw = out.iter().map(|u| u.w).sum::<f64>() / n;
        // Uniform on [c-a, c+a] has sd a/sqrt(3); the mean's sd divides by sqrt(n).
        let sv = 0.3 / 3f64.sqrt() / n.sqrt();
        let sw = 0.4 / 3f64.sqrt() / n.sqrt();
        assert!((mv - 0.5).abs() < 3.0 * sv, "{mv}");
        assert!(mw.abs() < 3.0 * sw, "{mw}");
    }

    #[test]
    fn sampling_is_seeded() {
        let limits = ControlLimits::default();
        let a = reachable_controls(Control::new(0.2, 0.1), &limits, &mut ChaCha8Rng::seed_from_u64(5));
        let b = reachable_controls(Control::new(0.2, 0.1), &limits, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn cost_examples() {
        let o = State::new(0.0, 0.0, 0.0);
        let dist_only = CostWeights { w1: 1.0, w2: 0.0 };
        let angle_only = CostWeights { w1: 0.0, w2: 1.0 };
        assert_abs_diff_eq!(cost(&o, Vec2::new(1.0, 0.0), Vec2::new(3.0, 4.0), dist_only), 5.0);
        assert_abs_diff_eq!(cost(&o, Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0), angle_only), 0.0);
        assert_abs_diff_eq!(cost(&o, Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), angle_only), FRAC_PI_2, epsilon = 1e-15);
        // Degenerate inputs.
        assert_eq!(cost(&o, Vec2::new(1.0, 0.0), Vec2::new(0.0, 0.0), angle_only), 0.0);
        let facing_up = State::new(0.0, 0.0, FRAC_PI_2);
        assert_abs_diff_eq!(cost(&facing_up, Vec2::zeros(), Vec2::new(0.0, 3.0), angle_only), 0.0, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn arc_semigroup(x in -5.0f64..5.0, y in -5.0f64..5.0, th in -3.0f64..3.0,
                         v in -1.0f64..1.0, w in -1.0f64..1.0, dt in 0.01f64..2.0) {
            let s = State::new(x, y, th);
            let u = Control::new(v, w);
            let full = propagate(&s, u, dt);
            let halves = propagate(&propagate(&s, u, dt / 2.0), u, dt / 2.0);
            proptest::prop_assert!(close(&full, &halves, 1e-9));
        }

        #[test]
        fn cost_is_translation_invariant_and_bounded(
            x1 in -5.0f64..5.0, y1 in -5.0f64..5.0, th in -3.0f64..3.0,
            x2 in -5.0f64..5.0, y2 in -5.0f64..5.0,
            vx in -1.0f64..1.0, vy in -1.0f64..1.0,
            tx in -100.0f64..100.0, ty in -100.0f64..100.0,
        ) {
            let w = CostWeights { w1: 1.0, w2: 0.5 };
            let v = Vec2::new(vx, vy);
            let a = cost(&State::new(x1, y1, th), v, Vec2::new(x2, y2), w);
            let b = cost(&State::new(x1 + tx, y1 + ty, th), v, Vec2::new(x2 + tx, y2 + ty), w);
            proptest::prop_assert!((a - b).abs() < 1e-9);
            let angular = cost(&State::new(x1, y1, th), v, Vec2::new(x2, y2), CostWeights { w1: 0.0, w2: 1.0 });
            proptest::prop_assert!((0.0..=PI).contains(&angular));
            proptest::prop_assert!(a >= 0.0);
        }

        #[test]
        fn arc_length_preserved(v in 0.01f64..1.0, w in 0.05f64..1.0, dt in 0.1f64..3.0) {
            // Chord of a circular arc of radius v/w subtending w*dt.
            let s = State::new(0.0, 0.0, 0.0);
            let e = propagate(&s, Control::new(v, w), dt);
            let radius = v / w;
            let chord = 2.0 * radius * (w * dt / 2.0).sin().abs();
            proptest::prop_assert!(((e.position()).norm() - chord).abs() < 1e-9);
            proptest::prop_assert!((arc_length(Control::new(v, w), dt) - radius * w * dt).abs() < 1e-9);
        }
    }
}
