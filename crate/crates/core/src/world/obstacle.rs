use super::{Vec2, WorldError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleSample {
    pub t: f64,
    pub position: Vec2,
}

/// A moving disc obstacle replayed from a time-ordered sample list.
///
/// `observed_up_to` is the playback cursor. Prediction only ever looks at
/// samples with `t <= observed_up_to`; [`DynamicObstacle::true_position`] is the
/// ground truth used for evaluation and must not feed the planner.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicObstacle {
    pub id: String,
    pub radius: f64,
    samples: Vec<ObstacleSample>,
    observed_up_to: f64,
}

impl DynamicObstacle {
    pub fn new(id: impl Into<String>, radius: f64, samples: Vec<ObstacleSample>) -> Result<Self, WorldError> {
        let ob = DynamicObstacle {
            id: id.into(),
            radius,
            samples,
            observed_up_to: f64::NEG_INFINITY,
        };
        ob.validate()?;
        Ok(ob)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(WorldError::Validation(format!(
                "obstacle {}: radius must be > 0",
                self.id
            )));
        }
        if self.samples.is_empty() {
            return Err(WorldError::Validation(format!("obstacle {}: no samples", self.id)));
        }
        for s in &self.samples {
            if !(s.t.is_finite() && s.position.x.is_finite() && s.position.y.is_finite()) {
                return Err(WorldError::Validation(format!(
                    "obstacle {}: non-finite sample",
                    self.id
                )));
            }
        }
        if let Some(w) = self.samples.windows(2).find(|w| w[1].t <= w[0].t) {
            return Err(WorldError::Validation(format!(
                "obstacle {}: timestamps not strictly increasing ({} then {})",
                self.id, w[0].t, w[1].t
            )));
        }
        Ok(())
    }

    pub fn samples(&self) -> &[ObstacleSample] {
        &self.samples
    }

    pub fn observed_up_to(&self) -> f64 {
        self.observed_up_to
    }

    /// Advance the playback cursor. The cursor never moves backwards.
    pub fn observe_until(&mut self, t: f64) {
        if t > self.observed_up_to {
            self.observed_up_to = t;
        }
    }

    /// Samples visible at time `from` under the current cursor.
    fn visible(&self, from: f64) -> &[ObstacleSample] {
        let limit = from.min(self.observed_up_to);
        let n = self.samples.partition_point(|s| s.t <= limit + 1e-9);
        &self.samples[..n]
    }

    /// Constant-velocity extrapolation anchored at `from`: returns the
    /// position at `from` and the velocity used.
    pub fn extrapolation(&self, from: f64) -> Result<(Vec2, Vec2), WorldError> {
        let seen = self.visible(from);
        let last = seen
            .last()
            .ok_or_else(|| WorldError::NoObservation(self.id.clone(), from))?;
        let velocity = if seen.len() >= 2 {
            let prev = seen[seen.len() - 2];
            (last.position - prev.position) / (last.t - prev.t)
        } else {
            Vec2::zeros()
        };
        Ok((last.position + velocity * (from - last.t), velocity))
    }

    /// Positions at `from, from + dt, ..., from + steps * dt`.
    pub fn predict_position(&self, from: f64, steps: usize, dt: f64) -> Result<Vec<Vec2>, WorldError> {
        let (anchor, velocity) = self.extrapolation(from)?;
        Ok((0..=steps)
            .map(|i| anchor + velocity * (i as f64 * dt))
            .collect())
    }

    /// Ground-truth position by linear interpolation, held constant outside
    /// the sampled interval.
    pub fn true_position(&self, t: f64) -> Vec2 {
        let s = &self.samples;
        if t <= s[0].t {
            return s[0].position;
        }
        let last = s[s.len() - 1];
        if t >= last.t {
            return last.position;
        }
        let i = s.partition_point(|x| x.t <= t);
        let (a, b) = (s[i - 1], s[i]);
        let u = (t - a.t) / (b.t - a.t);
        a.position + (b.position - a.position) * u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample(t: f64, x: f64, y: f64) -> ObstacleSample {
        ObstacleSample {
            t,
            position: Vec2::new(x, y),
        }
    }

    fn observed(samples: Vec<ObstacleSample>, upto: f64) -> DynamicObstacle {
        let mut ob = DynamicObstacle::new("a", 0.2, samples).unwrap();
        ob.observe_until(upto);
        ob
    }

    #[test]
    fn constant_velocity_prediction() {
        let ob = observed(vec![sample(0.0, 0.0, 0.0), sample(1.0, 1.0, 0.0)], 1.0);
        let p = ob.predict_position(1.0, 2, 1.0).unwrap();
        assert_eq!(p, vec![Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(3.0, 0.0)]);
    }

    #[test]
    fn single_sample_holds_still() {
        let ob = observed(vec![sample(0.0, 5.0, 5.0)], 10.0);
        let p = ob.predict_position(0.0, 2, 0.5).unwrap();
        assert_eq!(p, vec![Vec2::new(5.0, 5.0); 3]);
    }

    #[test]
    fn no_observation_is_an_error() {
        let ob = observed(vec![sample(2.0, 0.0, 0.0)], 5.0);
        assert!(matches!(
            ob.predict_position(1.0, 1, 1.0),
            Err(WorldError::NoObservation(..))
        ));
        let unobserved = DynamicObstacle::new("b", 0.2, vec![sample(0.0, 0.0, 0.0)]).unwrap();
        assert!(unobserved.predict_position(0.0, 1, 1.0).is_err());
    }

    #[test]
    fn prediction_ignores_unobserved_future() {
        // The third sample turns sharply; with the cursor at t=1 it must not leak.
        let ob = observed(
            vec![sample(0.0, 0.0, 0.0), sample(1.0, 1.0, 0.0), sample(2.0, 1.0, 5.0)],
            1.0,
        );
        let p = ob.predict_position(1.0, 1, 1.0).unwrap();
        assert_eq!(p[1], Vec2::new(2.0, 0.0));
        // Asking from a later time still only uses observed samples.
        let q = ob.predict_position(1.5, 0, 1.0).unwrap();
        assert_eq!(q[0], Vec2::new(1.5, 0.0));
    }

    #[test]
    fn circular_mover_uses_chord_tangent() {
        // Unit circle at 0.5 rad/s sampled every 0.5 s.
        let w: f64 = 0.5;
        let samples: Vec<_> = (0..6)
            .map(|i| {
                let t = i as f64 * 0.5;
                sample(t, (w * t).cos(), (w * t).sin())
            })
            .collect();
        let ob = observed(samples, 2.5);
        let p = ob.predict_position(2.5, 5, 0.5).unwrap();
        // Hand-computed: velocity = (p(2.5) - p(2.0)) / 0.5.
        let p2 = Vec2::new((w * 2.0).cos(), (w * 2.0).sin());
        let p25 = Vec2::new((w * 2.5).cos(), (w * 2.5).sin());
        let v = (p25 - p2) / 0.5;
        for (i, q) in p.iter().enumerate() {
            let expect = p25 + v * (i as f64 * 0.5);
            assert_abs_diff_eq!(q.x, expect.x, epsilon = 1e-12);
            assert_abs_diff_eq!(q.y, expect.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_non_monotone_samples() {
        assert!(DynamicObstacle::new("x", 0.2, vec![sample(1.0, 0.0, 0.0), sample(0.5, 0.0, 0.0)]).is_err());
        assert!(DynamicObstacle::new("x", 0.0, vec![sample(1.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn true_position_interpolates() {
        let ob = DynamicObstacle::new("a", 0.2, vec![sample(0.0, 0.0, 0.0), sample(2.0, 2.0, 4.0)]).unwrap();
        assert_eq!(ob.true_position(1.0), Vec2::new(1.0, 2.0));
        assert_eq!(ob.true_position(-1.0), Vec2::new(0.0, 0.0));
        assert_eq!(ob.true_position(9.0), Vec2::new(2.0, 4.0));
    }

    proptest::proptest! {
        #[test]
        fn prediction_is_translation_equivariant(
            pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..6),
            shift in (-50.0f64..50.0, -50.0f64..50.0),
            steps in 0usize..8,
        ) {
            let samples: Vec<_> = pts.iter().enumerate().map(|(i, p)| sample(i as f64 * 0.4, p.0, p.1)).collect();
            let moved: Vec<_> = samples.iter().map(|s| ObstacleSample { t: s.t, position: s.position + Vec2::new(shift.0, shift.1) }).collect();
            let horizon = samples.last().unwrap().t;
            let a = observed(samples, horizon).predict_position(horizon, steps, 0.25).unwrap();
            let b = observed(moved, horizon).predict_position(horizon, steps, 0.25).unwrap();
            for (p, q) in a.iter().zip(&b) {
                proptest::prop_assert!((q - p - Vec2::new(shift.0, shift.1)).norm() < 1e-9);
            }
        }
    }
}
