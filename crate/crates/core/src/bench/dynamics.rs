//! Synthetic moving obstacles with closed-form motion, or recorded playback.

use std::f64::consts::TAU;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::world::{load_trajectories, segment_static_free, DynamicObstacle, ObstacleSample, StaticMap, Vec2};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DynamicsProfile {
    /// Back and forth along a straight segment.
    LinearPingpong,
    /// Constant-speed orbit.
    Circular,
    /// Recorded trajectories from a CSV file.
    Csv(PathBuf),
}

impl fmt::Display for DynamicsProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DynamicsProfile::LinearPingpong => f.write_str("linear-pingpong"),
            DynamicsProfile::Circular => f.write_str("circular"),
            DynamicsProfile::Csv(p) => write!(f, "csv:{}", p.display()),
        }
    }
}

impl FromStr for DynamicsProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear-pingpong" => Ok(DynamicsProfile::LinearPingpong),
            "circular" => Ok(DynamicsProfile::Circular),
            _ => match s.strip_prefix("csv:") {
                Some(p) if !p.is_empty() => Ok(DynamicsProfile::Csv(PathBuf::from(p))),
                _ => Err(format!("unknown dynamics profile {s:?} (expected linear-pingpong, circular or csv:<path>)")),
            },
        }
    }
}

impl TryFrom<String> for DynamicsProfile {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<DynamicsProfile> for String {
    fn from(p: DynamicsProfile) -> String {
        p.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    /// Inclusive speed range, m/s.
    pub speed: (f64, f64),
    pub radius: f64,
    /// Segment length range for ping-pong movers, meters.
    pub amplitude: (f64, f64),
    /// Orbit radius range for circular movers, meters.
    pub orbit_radius: (f64, f64),
    /// Minimum distance between any mover path and the avoided points.
    pub keep_out: f64,
    /// Sample spacing and total length of the generated tracks, seconds.
    pub dt: f64,
    pub duration: f64,
    pub max_attempts: usize,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            speed: (0.2, 0.4),
            radius: 0.25,
            amplitude: (2.0, 4.0),
            orbit_radius: (0.6, 1.5),
            keep_out: 1.5,
            dt: 0.5,
            duration: 250.0,
            max_attempts: 5000,
        }
    }
}

/// Triangle-wave motion between `a` (at t = 0) and `b` (at t = period / 2).
pub fn pingpong_position(a: Vec2, b: Vec2, period: f64, t: f64) -> Vec2 {
    let phase = (t / period).rem_euclid(1.0);
    let s = if phase <= 0.5 { 2.0 * phase } else { 2.0 - 2.0 * phase };
    a + (b - a) * s
}

pub fn circular_position(center: Vec2, radius: f64, omega: f64, phase: f64, t: f64) -> Vec2 {
    let a = phase + omega * t;
    center + Vec2::new(a.cos(), a.sin()) * radius
}

/// `count` movers for `map`, keeping their paths away from `avoid` and off
/// static obstacles. Deterministic per seed.
pub fn gen_dynamics(
    profile: &DynamicsProfile,
    map: &StaticMap,
    avoid: &[Vec2],
    count: usize,
    seed: u64,
    params: &DynamicsParams,
) -> Result<Vec<DynamicObstacle>, BenchError> {
    if let DynamicsProfile::Csv(path) = profile {
        return Ok(load_trajectories(path)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > params.max_attempts {
            return Err(BenchError::Generation(format!(
                "placed only {} of {count} {profile} movers after {} attempts",
                out.len(),
                params.max_attempts
            )));
        }
        let track = match profile {
            DynamicsProfile::LinearPingpong => pingpong_track(map, avoid, params, &mut rng),
            DynamicsProfile::Circular => circular_track(map, avoid, params, &mut rng),
            DynamicsProfile::Csv(_) => unreachable!(),
        };
        if let Some(f) = track {
            let steps = (params.duration / params.dt).ceil() as usize;
            let samples = (0..=steps)
                .map(|k| {
                    let t = k as f64 * params.dt;
                    ObstacleSample { t, position: f(t) }
                })
                .collect();
            out.push(DynamicObstacle::new(format!("m{}", out.len()), params.radius, samples)?);
        }
    }
    Ok(out)
}

type Track = Box<dyn Fn(f64) -> Vec2>;

fn inside(map: &StaticMap, p: Vec2, margin: f64) -> bool {
    let ext = map.extent();
    p.x >= margin && p.y >= margin && p.x <= ext.x - margin && p.y <= ext.y - margin
}

fn segment_point_distance(a: Vec2, b: Vec2, p: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * s - p).norm()
}

fn pingpong_track(map: &StaticMap, avoid: &[Vec2], params: &DynamicsParams, rng: &mut ChaCha8Rng) -> Option<Track> {
    let ext = map.extent();
    let r = params.radius;
    let a = Vec2::new(rng.gen_range(r..ext.x - r), rng.gen_range(r..ext.y - r));
    let heading = rng.gen_range(0.0..TAU);
    let len = rng.gen_range(params.amplitude.0..=params.amplitude.1);
    let b = a + Vec2::new(heading.cos(), heading.sin()) * len;
    let speed = rng.gen_range(params.speed.0..=params.speed.1);
    let period = 2.0 * len / speed;
    let offset = rng.gen_range(0.0..period);
    if !inside(map, b, r) || avoid.iter().any(|&p| segment_point_distance(a, b, p) < params.keep_out + r) {
        return None;
    }
    if !segment_static_free(map, a, b, r) {
        return None;
    }
    Some(Box::new(move |t| pingpong_position(a, b, period, t + offset)))
}

fn circular_track(map: &StaticMap, avoid: &[Vec2], params: &DynamicsParams, rng: &mut ChaCha8Rng) -> Option<Track> {
    let ext = map.extent();
    let r = params.radius;
    let rho = rng.gen_range(params.orbit_radius.0..=params.orbit_radius.1);
    let m = rho + r;
    if ext.x <= 2.0 * m || ext.y <= 2.0 * m {
        return None;
    }
    let c = Vec2::new(rng.gen_range(m..ext.x - m), rng.gen_range(m..ext.y - m));
    let speed = rng.gen_range(params.speed.0..=params.speed.1);
    let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let omega = dir * speed / rho;
    let phase = rng.gen_range(0.0..TAU);
    if avoid.iter().any(|&p| (p - c).norm() < rho + params.keep_out + r) {
        return None;
    }
    const N: usize = 24;
    let ring: Vec<Vec2> = (0..=N).map(|k| circular_position(c, rho, 1.0, 0.0, TAU * k as f64 / N as f64)).collect();
    if !ring.windows(2).all(|w| segment_static_free(map, w[0], w[1], r)) {
        return None;
    }
    Some(Box::new(move |t| circular_position(c, rho, omega, phase, t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pingpong_reaches_far_endpoint_at_half_period() {
        let a = Vec2::new(1.0, 1.0);
        let b = Vec2::new(4.0, 5.0);
        assert_eq!(pingpong_position(a, b, 8.0, 0.0), a);
        assert_relative_eq!(pingpong_position(a, b, 8.0, 4.0), b, epsilon = 1e-12);
        assert_relative_eq!(pingpong_position(a, b, 8.0, 8.0), a, epsilon = 1e-12);
        assert_relative_eq!(pingpong_position(a, b, 8.0, 2.0), Vec2::new(2.5, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn profiles_parse() {
        assert_eq!("linear-pingpong".parse::<DynamicsProfile>().unwrap(), DynamicsProfile::LinearPingpong);
        assert_eq!(
            "csv:data/ucy.csv".parse::<DynamicsProfile>().unwrap(),
            DynamicsProfile::Csv(PathBuf::from("data/ucy.csv"))
        );
        assert!("csv:".parse::<DynamicsProfile>().is_err());
        assert!("zigzag".parse::<DynamicsProfile>().is_err());
    }

    #[test]
    fn count_zero_is_empty() {
        let map = StaticMap::empty(50, 50, 0.1).unwrap();
        let obs = gen_dynamics(&DynamicsProfile::Circular, &map, &[], 0, 1, &DynamicsParams::default()).unwrap();
        assert!(obs.is_empty());
    }

    #[test]
    fn synthetic_movers_respect_speed_and_keep_out() {
        let map = StaticMap::empty(100, 100, 0.1).unwrap();
        let avoid = [Vec2::new(0.5, 0.5), Vec2::new(9.5, 9.5)];
        let params = DynamicsParams::default();
        for profile in [DynamicsProfile::LinearPingpong, DynamicsProfile::Circular] {
            let obs = gen_dynamics(&profile, &map, &avoid, 3, 9, &params).unwrap();
            assert_eq!(obs.len(), 3);
            for ob in &obs {
                for w in ob.samples().windows(2) {
                    let v = (w[1].position - w[0].position).norm() / (w[1].t - w[0].t);
                    assert!(v <= 0.4 + 1e-9, "{profile}: {v}");
                }
                for s in ob.samples() {
                    for p in &avoid {
                        assert!((s.position - p).norm() >= params.keep_out);
                    }
                }
            }
            let again = gen_dynamics(&profile, &map, &avoid, 3, 9, &params).unwrap();
            assert_eq!(obs, again);
        }
    }

    #[test]
    fn csv_playback_echoes_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tracks.csv");
        let mut text = String::from("obstacle_id,t,x,y,radius\n");
        for id in ["a", "b", "c"] {
            for k in 0..4 {
                text.push_str(&format!("{id},{},{},1.0,0.3\n", k as f64 * 0.5, k as f64));
            }
        }
        std::fs::write(&path, text).unwrap();
        let map = StaticMap::empty(50, 50, 0.1).unwrap();
        let obs = gen_dynamics(&DynamicsProfile::Csv(path), &map, &[], 0, 0, &DynamicsParams::default()).unwrap();
        assert_eq!(obs.len(), 3);
        assert!(obs.iter().all(|o| o.samples().len() == 4));
    }
}
