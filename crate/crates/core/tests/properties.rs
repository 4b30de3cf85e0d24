use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use namr_core::bench::{aggregate, run_suite, BenchSuite, DynamicsParams, DynamicsProfile, DynamicsSpec, MapFamily, ScenarioSpec};
use namr_core::heuristic::{bfs_waypoints, net_infer, HeuristicError, RefreshMode, RegionGenerator};
use namr_core::kinematics::{propagate, Control, ControlLimits, CostWeights, State};
use namr_core::planner::{PlannerConfig, Variant};
use namr_core::sampler::{RegionMode, Sampler, SamplerConfig};
use namr_core::timetree::TimeTree;
use namr_core::world::{Cell, DynamicObstacle, ObstacleSample, RiskModel, StaticMap, Vec2, WorldSnapshot};

const DT: f64 = 0.5;
const P_MAX: f64 = 0.1;

fn walled_map(wall_x: i32) -> StaticMap {
    let mut map = StaticMap::empty(40, 40, 0.25).unwrap();
    for y in 10..30 {
        map.set_prob(Cell::new(wall_x, y), 1.0);
    }
    map
}

fn mover(start: Vec2, velocity: Vec2) -> DynamicObstacle {
    let samples = (0..80)
        .map(|k| {
            let t = k as f64 * DT;
            ObstacleSample { t, position: start + velocity * t }
        })
        .collect();
    DynamicObstacle::new("m", 0.3, samples).unwrap()
}

fn snapshot(map: &Arc<StaticMap>, obstacles: &mut [DynamicObstacle], t: f64) -> WorldSnapshot {
    for ob in obstacles.iter_mut() {
        ob.observe_until(t);
    }
    WorldSnapshot::new(Arc::clone(map), obstacles, t, 3.0, 0.2, RiskModel::default())
}

fn check_tree(tree: &TimeTree, goal: Vec2) -> Result<(), TestCaseError> {
    tree.check_invariants().map_err(TestCaseError::fail)?;
    for n in tree.iter().filter(|n| n.id != tree.root()) {
        prop_assert!(n.risk <= P_MAX, "node {} stored with risk {}", n.id, n.risk);
    }
    let best = tree.select_best(goal, CostWeights::default());
    prop_assert_eq!(best.node_ids.first().copied(), Some(tree.root()));
    for (w, p) in best.node_ids.windows(2).zip(best.points.windows(2)) {
        prop_assert_eq!(tree.node(w[1]).parent, Some(w[0]));
        prop_assert!((p[1].t - p[0].t - DT).abs() < 1e-9);
        let next = propagate(&p[0].state(), p[1].control(), DT);
        prop_assert!((next.position() - p[1].state().position()).norm() < 1e-9);
    }
    let length: f64 = best.points.iter().skip(1).map(|p| p.v.abs() * DT).sum();
    prop_assert!((best.total_length - length).abs() < 1e-9);
    Ok(())
}

/// Scripted generator: a random rectangle per query, recorded for inspection.
struct Blobs {
    rng: ChaCha8Rng,
    responses: Vec<Vec<Cell>>,
}

impl RegionGenerator for Blobs {
    fn generate(&mut self, map: &StaticMap, start: Cell, goal: Cell) -> Result<Vec<Cell>, HeuristicError> {
        let (w, h) = (map.width() as i32, map.height() as i32);
        // Anchor on the query start or the goal so retries can make progress.
        let anchor = if self.rng.gen_bool(0.5) { start } else { goal };
        let (rw, rh) = (self.rng.gen_range(1..12), self.rng.gen_range(1..12));
        let (x0, y0) = (anchor.x - self.rng.gen_range(0..rw), anchor.y - self.rng.gen_range(0..rh));
        let cells: Vec<Cell> = (y0..y0 + rh)
            .flat_map(|y| (x0..x0 + rw).map(move |x| Cell::new(x, y)))
            .filter(|c| c.x >= 0 && c.y >= 0 && c.x < w && c.y < h)
            .collect();
        self.responses.push(cells.clone());
        Ok(cells)
    }

    fn name(&self) -> &str {
        "blobs"
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn time_tree_invariants_survive_growth_and_pruning(
        seed in any::<u64>(),
        wall_x in 8i32..30,
        movers in prop::collection::vec((0.5f64..9.5, 0.5f64..9.5, -0.6f64..0.6, -0.6f64..0.6), 0..4),
        rounds in 1usize..6,
    ) {
        let map = Arc::new(walled_map(wall_x));
        let mut obstacles: Vec<DynamicObstacle> =
            movers.iter().map(|&(x, y, vx, vy)| mover(Vec2::new(x, y), Vec2::new(vx, vy))).collect();
        let goal = Vec2::new(9.0, 9.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tree = TimeTree::new(State::new(1.0, 1.0, 0.0), Control::ZERO, 0, DT);
        for _ in 0..rounds {
            let world = snapshot(&map, &mut obstacles, tree.t_root());
            for _ in 0..40 {
                let target = Vec2::new(rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0));
                tree.extend(target, &world, &ControlLimits::default(), CostWeights::default(), P_MAX, &mut rng);
            }
            check_tree(&tree, goal)?;
            // Advance one step along the best branch and recheck against the new snapshot.
            let best = tree.select_best(goal, CostWeights::default());
            let Some(&next) = best.node_ids.get(1) else { break };
            let world = snapshot(&map, &mut obstacles, tree.node(next).t);
            let before: HashSet<usize> = tree.subtree(next).into_iter().collect();
            tree.prune_invalid(next, &world, P_MAX);
            prop_assert_eq!(tree.root(), next);
            prop_assert!(tree.iter().all(|n| before.contains(&n.id)));
            check_tree(&tree, goal)?;
        }
    }

    #[test]
    fn net_infer_accumulates_responses_and_links_adjacent_cells(
        seed in any::<u64>(),
        sx in 0i32..30, sy in 0i32..30, gx in 0i32..30, gy in 0i32..30,
        max_iter in 1usize..8,
    ) {
        let map = StaticMap::empty(30, 30, 0.1).unwrap();
        let mut generator = Blobs { rng: ChaCha8Rng::seed_from_u64(seed), responses: Vec::new() };
        let start = State::new(map.cell_center(Cell::new(sx, sy)).x, map.cell_center(Cell::new(sx, sy)).y, 0.0);
        let goal_cell = Cell::new(gx, gy);
        let inf = net_infer(&start, map.cell_center(goal_cell), &map, &mut generator, max_iter).unwrap();
        prop_assert_eq!(inf.iterations, generator.responses.len());
        prop_assert!(inf.iterations <= max_iter);
        let union: HashSet<Cell> = generator.responses.iter().flatten().copied().collect();
        let region: HashSet<Cell> = inf.region.cells().iter().copied().collect();
        prop_assert_eq!(&region, &union);
        if inf.waypoints.connected {
            let chain = &inf.waypoints.cells;
            prop_assert_eq!(chain.last(), Some(&goal_cell));
            prop_assert!(chain.iter().all(|c| region.contains(c)));
            for w in chain.windows(2) {
                prop_assert_eq!((w[0].x - w[1].x).abs() + (w[0].y - w[1].y).abs(), 1);
            }
            let nearest = region.iter().map(|c| c.dist2(Cell::new(sx, sy))).min().unwrap();
            prop_assert_eq!(chain[0].dist2(Cell::new(sx, sy)), nearest);
            prop_assert_eq!(Some(chain.clone()), bfs_waypoints(&inf.region, Cell::new(sx, sy), goal_cell));
        } else {
            prop_assert_eq!(inf.iterations, max_iter);
            prop_assert_eq!(&inf.waypoints.cells, &vec![goal_cell]);
        }
    }

    #[test]
    fn adaptive_bias_and_versions_follow_their_laws(
        seed in any::<u64>(),
        latency in 0u64..20,
        wobble in 0.0f64..0.4,
    ) {
        let mut map = StaticMap::empty(60, 60, 0.1).unwrap();
        for y in 0..40 {
            map.set_prob(Cell::new(30, y), 1.0);
        }
        let map = Arc::new(map);
        let cfg = SamplerConfig {
            refresh: if latency == 0 { RefreshMode::Sync } else { RefreshMode::Async { latency_samples: latency } },
            ..SamplerConfig::default()
        };
        let start = State::new(0.5, 0.5, 0.0);
        let mut sampler = Sampler::guided(RegionMode::Adaptive, &cfg, Arc::clone(&map), start, Vec2::new(5.5, 0.5), None);
        sampler.record_trace(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Walk the robot down the current waypoint chain so waypoints fire.
        let mut robot = start;
        let mut waypoints_per_version: Vec<(u64, usize)> = Vec::new();
        for _ in 0..600 {
            let version = sampler.version();
            let consumed_before = sampler.consumed().to_vec();
            sampler.sample(&robot, &mut rng);
            if sampler.version() == version {
                let after = sampler.consumed();
                prop_assert!(consumed_before.iter().zip(after).all(|(&b, &a)| !b || a), "a consumed waypoint came back");
            }
            let wp = sampler.waypoints().unwrap();
            let next = wp.positions.iter().zip(sampler.consumed()).find(|(_, &c)| !c).map(|(p, _)| *p);
            if let Some(p) = next {
                let step = (p - robot.position()).cap_magnitude(0.08);
                let jitter = Vec2::new(rng.gen_range(-wobble..=wobble), rng.gen_range(-wobble..=wobble)) * 0.1;
                let q = robot.position() + step + jitter;
                robot = State::new(q.x, q.y, 0.0);
            }
            if waypoints_per_version.last().is_none_or(|e| e.0 != sampler.version()) {
                waypoints_per_version.push((sampler.version(), wp.len()));
            }
        }
        let trace = sampler.take_trace().unwrap();
        prop_assert_eq!(trace[0].bias, 1.0);
        let mut per_version = std::collections::HashMap::<u64, usize>::new();
        for (i, r) in trace.iter().enumerate() {
            prop_assert!((cfg.bias_floor..=1.0).contains(&r.bias));
            if r.triggered {
                prop_assert_eq!(r.bias, 1.0);
                *per_version.entry(r.version).or_default() += 1;
            }
            if i > 0 {
                let p = &trace[i - 1];
                prop_assert!(r.version >= p.version);
                prop_assert_eq!(r.version - p.version, u64::from(r.applied));
                if !r.triggered {
                    prop_assert!(r.bias <= p.bias);
                    prop_assert!(r.bias < 1.0);
                }
            }
        }
        prop_assert!(!per_version.is_empty(), "the walk never reached a waypoint");
        for (version, len) in &waypoints_per_version {
            prop_assert!(per_version.get(version).copied().unwrap_or(0) <= *len);
        }
    }
}

#[test]
fn parallel_and_serial_suites_agree() {
    let mut scenario = ScenarioSpec::generated("discs", MapFamily::Discs, 40, 3);
    scenario.dynamics = Some(DynamicsSpec {
        profile: DynamicsProfile::LinearPingpong,
        count: 2,
        seed: 3,
        params: DynamicsParams::default(),
    });
    let suite = BenchSuite {
        scenarios: vec![scenario, ScenarioSpec::generated("blocks", MapFamily::Blocks, 40, 1)],
        variants: vec![Variant::Risk, Variant::Bi, Variant::Multi, Variant::Nmr, Variant::Namr],
        runs: 3,
        timeout: 60.0,
        base_seed: 7,
        config: PlannerConfig::default(),
    };
    let dir = std::path::Path::new(".");
    let serial = run_suite(&suite, dir, 1).unwrap();
    let parallel = run_suite(&suite, dir, 4).unwrap();
    assert_eq!(serial, parallel);
    assert_eq!(serial.rows, parallel.rows);
    assert_eq!(serial.summary_json(), parallel.summary_json());
    assert_eq!(aggregate(&serial.rows), serial.cells);
    assert_eq!(serial.rows.len(), 2 * 5 * 3);
}
