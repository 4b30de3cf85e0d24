//! Target sampling for tree growth: uniform over the map, or biased toward
//! a heuristic region whose bias decays per sample and resets whenever the
//! robot passes a waypoint (which also requests a fresh region).

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::heuristic::{
    region_sample, ExternalModel, HeuristicRegion, OracleCorridor, RefreshMode, RefreshOutcome, RefreshService,
    RegionGenerator, Transport, Waypoints,
};
use crate::kinematics::State;
use crate::world::{StaticMap, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Waypoint trigger distance in meters; defaults to
    /// `2 * corridor_radius_cells * resolution`.
    pub delta: Option<f64>,
    pub gamma: f64,
    pub bias_floor: f64,
    pub max_iter: usize,
    pub waypoint_stride: usize,
    /// Constant region-sampling probability when the region is not adaptive.
    pub fixed_bias: f64,
    pub clearance_cells: u32,
    pub corridor_radius_cells: u32,
    pub refresh: RefreshMode,
    /// External generator; the built-in oracle is used when absent.
    pub generator: Option<Transport>,
    pub generator_timeout_ms: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            delta: None,
            gamma: 0.995,
            bias_floor: 0.1,
            max_iter: 5,
            waypoint_stride: 1,
            fixed_bias: 0.5,
            clearance_cells: 3,
            corridor_radius_cells: 10,
            refresh: RefreshMode::default(),
            generator: None,
            generator_timeout_ms: 5000,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err("sampler.gamma must lie in (0, 1]".into());
        }
        if !(self.bias_floor > 0.0 && self.bias_floor <= 1.0) {
            return Err("sampler.bias_floor must lie in (0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.fixed_bias) {
            return Err("sampler.fixed_bias must lie in [0, 1]".into());
        }
        if self.max_iter == 0 {
            return Err("sampler.max_iter must be >= 1".into());
        }
        if self.delta.is_some_and(|d| !(d > 0.0)) {
            return Err("sampler.delta must be > 0".into());
        }
        Ok(())
    }

    pub fn oracle(&self) -> OracleCorridor {
        OracleCorridor {
            clearance_cells: self.clearance_cells,
            corridor_radius_cells: self.corridor_radius_cells,
        }
    }

    pub fn resolved_delta(&self, map: &StaticMap) -> f64 {
        self.delta
            .unwrap_or(2.0 * self.corridor_radius_cells as f64 * map.resolution())
    }

    /// Connect the configured external generator, if any. A connection
    /// failure falls back to the oracle.
    pub fn connect_generator(&self) -> Option<Box<dyn RegionGenerator>> {
        let transport = self.generator.as_ref()?;
        match ExternalModel::connect(transport, Duration::from_millis(self.generator_timeout_ms)) {
            Ok(m) => Some(Box::new(m)),
            Err(e) => {
                log::warn!("cannot reach external generator ({e}); using the oracle");
                None
            }
        }
    }
}

/// `max(gamma * bias, floor)`.
pub fn decay_bias(bias: f64, gamma: f64, floor: f64) -> f64 {
    (gamma * bias).max(floor)
}

/// Uniform position over the whole map with a uniform heading.
pub fn uniform_sample<R: Rng + ?Sized>(map: &StaticMap, rng: &mut R) -> State {
    let ext = map.extent();
    let x = ext.x * rng.gen::<f64>();
    let y = ext.y * rng.gen::<f64>();
    let theta = -PI + 2.0 * PI * rng.gen::<f64>();
    State::new(x, y, theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// No region; every sample is uniform.
    None,
    /// One region computed at the start, sampled at a constant rate.
    Fixed,
    /// Decaying bias with waypoint-triggered refresh.
    Adaptive,
}

/// One entry of the per-sample trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: u64,
    /// Bias in effect when the sample was drawn.
    pub bias: f64,
    pub triggered: bool,
    pub requested: bool,
    pub applied: bool,
    pub version: u64,
    pub in_region: bool,
}

pub struct Sampler {
    mode: RegionMode,
    gamma: f64,
    floor: f64,
    stride: usize,
    delta: f64,
    bias: f64,
    region: Option<HeuristicRegion>,
    waypoints: Option<Waypoints>,
    consumed: Vec<bool>,
    node_list: Vec<State>,
    service: Option<RefreshService>,
    sample_index: u64,
    updates: u64,
    fallback_engaged: bool,
    trace: Option<Vec<SampleRecord>>,
    map: Arc<StaticMap>,
}

impl Sampler {
    pub fn uniform(map: Arc<StaticMap>) -> Self {
        Sampler {
            mode: RegionMode::None,
            gamma: 1.0,
            floor: 0.0,
            stride: 1,
            delta: 0.0,
            bias: 0.0,
            region: None,
            waypoints: None,
            consumed: Vec::new(),
            node_list: Vec::new(),
            service: None,
            sample_index: 0,
            updates: 0,
            fallback_engaged: false,
            trace: None,
            map,
        }
    }

    /// Build a region-guided sampler; the initial region is generated from
    /// `start` before returning.
    pub fn guided(
        mode: RegionMode,
        cfg: &SamplerConfig,
        map: Arc<StaticMap>,
        start: State,
        goal: Vec2,
        generator: Option<Box<dyn RegionGenerator>>,
    ) -> Self {
        let mut s = Sampler::uniform(Arc::clone(&map));
        if mode == RegionMode::None {
            return s;
        }
        s.mode = mode;
        s.stride = cfg.waypoint_stride.max(1);
        s.delta = cfg.resolved_delta(&map);
        let refresh = if mode == RegionMode::Adaptive { cfg.refresh } else { RefreshMode::Sync };
        let mut service = RefreshService::new(refresh, generator, cfg.oracle(), Arc::clone(&map), goal, cfg.max_iter);
        let initial = service.compute_blocking(start, 0);
        s.node_list.push(start);
        s.apply(initial, true);
        match mode {
            RegionMode::Adaptive => {
                s.gamma = cfg.gamma;
                s.floor = cfg.bias_floor;
                s.bias = 1.0;
                s.service = Some(service);
            }
            _ => {
                s.gamma = 1.0;
                s.floor = cfg.fixed_bias;
                s.bias = cfg.fixed_bias;
            }
        }
        s
    }

    pub fn record_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn take_trace(&mut self) -> Option<Vec<SampleRecord>> {
        self.trace.take()
    }

    pub fn mode(&self) -> RegionMode {
        self.mode
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn region(&self) -> Option<&HeuristicRegion> {
        self.region.as_ref()
    }

    pub fn version(&self) -> u64 {
        self.region.as_ref().map_or(0, |r| r.version)
    }

    pub fn waypoints(&self) -> Option<&Waypoints> {
        self.waypoints.as_ref()
    }

    pub fn consumed(&self) -> &[bool] {
        &self.consumed
    }

    pub fn node_list(&self) -> &[State] {
        &self.node_list
    }

    pub fn samples_drawn(&self) -> u64 {
        self.sample_index
    }

    /// Regions applied so far, including the initial one.
    pub fn region_updates(&self) -> u64 {
        self.updates
    }

    pub fn fallback_engaged(&self) -> bool {
        self.fallback_engaged
    }

    pub fn is_pending(&self) -> bool {
        self.service.as_ref().is_some_and(RefreshService::is_pending)
    }

    fn apply(&mut self, outcome: RefreshOutcome, initial: bool) {
        self.fallback_engaged |= outcome.fell_back;
        let inf = outcome.inference;
        if inf.region.is_empty() && !initial {
            return;
        }
        let version = self.version() + 1;
        let origin = inf.region.source_start.position();
        let mut region = inf.region;
        region.version = version;
        let waypoints = inf.waypoints.thinned(self.stride);
        // Waypoints already within reach of the requesting node would fire
        // again immediately.
        self.consumed = waypoints
            .positions
            .iter()
            .map(|w| (w - origin).norm() < self.delta)
            .collect();
        self.waypoints = Some(waypoints);
        self.region = Some(region);
        self.updates += 1;
    }

    /// Draw the next growth target. `current` is the robot's state.
    pub fn sample<R: Rng + ?Sized>(&mut self, current: &State, rng: &mut R) -> State {
        let index = self.sample_index;
        self.sample_index += 1;
        if self.mode == RegionMode::None {
            return uniform_sample(&self.map, rng);
        }
        let mut record = SampleRecord {
            index,
            bias: 0.0,
            triggered: false,
            requested: false,
            applied: false,
            version: 0,
            in_region: false,
        };
        if let Some(out) = self.service.as_mut().and_then(|s| s.poll(index)) {
            let before = self.version();
            self.apply(out, false);
            record.applied = self.version() != before;
        }
        if self.mode == RegionMode::Adaptive {
            let pos = current.position();
            let delta = self.delta;
            let mut hit = false;
            if let Some(w) = &self.waypoints {
                for (i, p) in w.positions.iter().enumerate() {
                    if !self.consumed[i] && (p - pos).norm() < delta {
                        self.consumed[i] = true;
                        hit = true;
                    }
                }
            }
            if hit {
                self.node_list.push(*current);
                let last = *self.node_list.last().expect("just pushed");
                record.requested = self.service.as_mut().is_some_and(|s| s.request(last, index));
                self.bias = 1.0;
                record.triggered = true;
            }
        }
        record.bias = self.bias;
        record.version = self.version();
        let region = self.region.as_ref().filter(|r| !r.is_empty());
        let out = match region {
            Some(r) if rng.gen::<f64>() < self.bias => {
                record.in_region = true;
                region_sample(r, &self.map, rng).expect("non-empty region")
            }
            _ => uniform_sample(&self.map, rng),
        };
        self.bias = decay_bias(self.bias, self.gamma, self.floor);
        if let Some(t) = self.trace.as_mut() {
            t.push(record);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Cell;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn decay_examples() {
        assert_eq!(decay_bias(1.0, 0.995, 0.1), 0.995);
        assert_eq!(decay_bias(0.1, 0.995, 0.1), 0.1);
        let mut b = 1.0;
        for _ in 0..1000 {
            b = decay_bias(b, 0.995, 0.1);
        }
        assert_eq!(b, 0.995f64.powi(1000).max(0.1));
    }

    /// A map position farther than `delta` from every waypoint.
    fn away_from(s: &Sampler) -> State {
        let w = s.waypoints().unwrap();
        (0..100)
            .flat_map(|i| (0..100).map(move |j| Vec2::new(0.05 + 0.1 * i as f64, 0.05 + 0.1 * j as f64)))
            .find(|p| w.positions.iter().all(|q| (p - q).norm() > s.delta() + 0.1))
            .map(|p| State::from_position(p, 0.0))
            .unwrap()
    }

    fn corridor_map() -> Arc<StaticMap> {
        Arc::new(StaticMap::empty(100, 100, 0.1).unwrap())
    }

    #[test]
    fn full_bias_samples_stay_in_region() {
        let map = corridor_map();
        let cfg = SamplerConfig { refresh: RefreshMode::Sync, ..Default::default() };
        let start = State::new(0.55, 0.55, 0.0);
        let mut s = Sampler::guided(RegionMode::Adaptive, &cfg, Arc::clone(&map), start, Vec2::new(9.45, 9.45), None);
        let region = s.region().unwrap().clone();
        assert_eq!(region.version, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let far = away_from(&s);
        for _ in 0..1000 {
            s.bias = 1.0;
            let q = s.sample(&far, &mut rng);
            assert!(region.contains(map.cell_of(q.position()).unwrap()));
        }
    }

    #[test]
    fn floor_bias_fraction() {
        let map = corridor_map();
        let mut s = Sampler::uniform(Arc::clone(&map));
        s.mode = RegionMode::Fixed;
        let cells: Vec<Cell> = (0..100).map(|x| Cell::new(x, 50)).collect();
        s.region = Some(HeuristicRegion::from_cells(&map, cells, State::new(0.0, 0.0, 0.0)));
        s.bias = 0.1;
        s.floor = 0.1;
        s.gamma = 0.995;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let region = s.region().unwrap().clone();
        let hits = (0..n)
            .filter(|_| region.contains(map.cell_of(s.sample(&State::new(0.0, 0.0, 0.0), &mut rng).position()).unwrap()))
            .count() as f64;
        let p = 0.1 + 0.9 * 0.01;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - n as f64 * p).abs() < 3.0 * sd, "{hits}");
    }

    #[test]
    fn waypoint_proximity_triggers_refresh() {
        let map = corridor_map();
        let cfg = SamplerConfig { refresh: RefreshMode::Sync, delta: Some(0.15), ..Default::default() };
        let start = State::new(0.55, 0.55, 0.0);
        let mut s = Sampler::guided(RegionMode::Adaptive, &cfg, Arc::clone(&map), start, Vec2::new(9.45, 9.45), None);
        s.record_trace(true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let far = away_from(&s);
        for _ in 0..10 {
            s.sample(&far, &mut rng);
        }
        assert!(s.bias() < 1.0);
        let w3 = s.waypoints().unwrap().positions[3];
        s.sample(&State::from_position(w3, 0.0), &mut rng);
        assert!(s.consumed()[3]);
        assert!(s.is_pending());
        assert_eq!(s.node_list().len(), 2);
        let trace = s.take_trace().unwrap();
        let last = trace.last().unwrap();
        assert!(last.triggered && last.requested);
        assert_eq!(last.bias, 1.0);
        // The refresh lands on the next draw.
        s.record_trace(true);
        s.sample(&far, &mut rng);
        assert_eq!(s.version(), 2);
        assert!(s.take_trace().unwrap()[0].applied);
    }

    #[test]
    fn uniform_covers_map() {
        let map = corridor_map();
        let mut s = Sampler::uniform(Arc::clone(&map));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let q = s.sample(&State::new(0.0, 0.0, 0.0), &mut rng);
            assert!(map.cell_of(q.position()).is_some());
        }
    }
}
