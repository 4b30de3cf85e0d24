//! The simulated control loop. Each cycle re-observes the moving obstacles,
//! re-validates the root tree from the robot's node, grows it for a fixed
//! number of iterations and moves the robot one node along the best branch.

mod config;
mod replay;

pub use config::{Features, PlannerConfig, Variant};
pub use replay::{safety_replay, ReplayReport};

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heuristic::RegionGenerator;
use crate::kinematics::{propagate, reachable_controls, Control, ControlLimits, State};
use crate::multitree::{Guidance, GuidanceStep, RootIndex, SubTreeSet, SubtreeMode};
use crate::sampler::{SampleRecord, Sampler};
use crate::timetree::{goal_reached, trajectory_length, NodeId, TimeTree, Trajectory, TrajectoryPoint};
use crate::world::{DynamicObstacle, Scenario, StaticMap, Vec2, WorldError, WorldSnapshot};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Scenario(#[from] WorldError),
    #[error("invalid planner config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Reached,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycle: u64,
    pub t: f64,
    pub tree_nodes: usize,
    pub added: usize,
    pub pruned: usize,
    pub rerooted: usize,
    pub subtrees: usize,
    pub subtree_nodes: usize,
    pub region_version: u64,
    pub bias: f64,
    pub guided: bool,
    /// No trajectory was available at the end of this cycle.
    pub stopped: bool,
    /// Holding position was predicted unsafe, so the robot took the least
    /// risky reachable control instead.
    pub evaded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    /// Root-tree nodes created over the run.
    pub nodes_created: usize,
    /// Heuristic regions applied, including the initial one.
    pub region_updates: u64,
    pub generator_fallback: bool,
    pub cycles: Vec<CycleStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<SampleRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub variant: Variant,
    pub seed: u64,
    pub success: bool,
    pub termination: Termination,
    /// Simulated seconds from start to goal (or to the timeout).
    pub execution_time: f64,
    pub cycles: u64,
    pub trajectory_length: f64,
    pub trajectory: Trajectory,
    pub stats: PlanStats,
}

impl PlanOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }
}

/// Run `scenario` to completion with the built-in or configured generator.
pub fn plan(scenario: &Scenario, config: &PlannerConfig) -> Result<PlanOutcome, PlanError> {
    let generator = config.sampler.connect_generator();
    plan_with(scenario, config, generator)
}

/// Like [`plan`], with an explicit region generator (the oracle when `None`).
pub fn plan_with(
    scenario: &Scenario,
    config: &PlannerConfig,
    generator: Option<Box<dyn RegionGenerator>>,
) -> Result<PlanOutcome, PlanError> {
    let mut planner = Planner::new(scenario, config, generator)?;
    Ok(planner.run())
}

enum Growth {
    Root(Option<NodeId>),
    Subtree,
}

pub struct Planner {
    cfg: PlannerConfig,
    features: Features,
    map: Arc<StaticMap>,
    obstacles: Vec<DynamicObstacle>,
    goal: Vec2,
    goal_radius: f64,
    dt: f64,
    horizon: f64,
    eps_guid: f64,
    tree: TimeTree,
    robot_node: NodeId,
    subtrees: Option<SubTreeSet>,
    index: RootIndex,
    guidance: Option<Guidance>,
    sampler: Sampler,
    rng: ChaCha8Rng,
    step: u64,
    executed: Vec<TrajectoryPoint>,
    cycles: Vec<CycleStats>,
}

impl Planner {
    pub fn new(
        scenario: &Scenario,
        config: &PlannerConfig,
        generator: Option<Box<dyn RegionGenerator>>,
    ) -> Result<Self, PlanError> {
        scenario.validate()?;
        config.validate().map_err(PlanError::Config)?;
        let features = config.features();
        let map = Arc::new(scenario.map.clone());
        let dt = config.dt.unwrap_or(scenario.dt);
        let goal_radius = config.epsilon.unwrap_or(scenario.goal_radius);
        let horizon_depth = config.horizon_depth.unwrap_or(scenario.horizon_depth);
        let mt = &config.multitree;
        let step_len = mt.step_len.unwrap_or(3.0 * map.resolution());
        let subtrees = (features.subtrees != SubtreeMode::None)
            .then(|| SubTreeSet::new(scenario.goal, mt.rho, step_len, config.robot_radius));
        let mut sampler = Sampler::guided(
            features.region,
            &config.sampler,
            Arc::clone(&map),
            scenario.start,
            scenario.goal,
            generator,
        );
        sampler.record_trace(config.record_samples);
        let mut obstacles = scenario.obstacles.clone();
        for ob in &mut obstacles {
            ob.observe_until(0.0);
        }
        let tree = TimeTree::new(scenario.start, Control::ZERO, 0, dt);
        let robot_node = tree.root();
        Ok(Planner {
            features,
            map,
            obstacles,
            goal: scenario.goal,
            goal_radius,
            dt,
            horizon: horizon_depth as f64 * dt,
            eps_guid: mt.eps_guid.unwrap_or(goal_radius),
            tree,
            robot_node,
            subtrees,
            index: RootIndex::new(mt.d_meet),
            guidance: None,
            sampler,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            step: 0,
            executed: vec![TrajectoryPoint::new(scenario.start, Control::ZERO, 0.0)],
            cycles: Vec::new(),
            cfg: config.clone(),
        })
    }

    pub fn tree(&self) -> &TimeTree {
        &self.tree
    }

    pub fn subtrees(&self) -> Option<&SubTreeSet> {
        self.subtrees.as_ref()
    }

    pub fn sampler(&self) -> &Sampler {
        &self.sampler
    }

    pub fn robot(&self) -> State {
        self.tree.node(self.robot_node).state
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn executed(&self) -> &[TrajectoryPoint] {
        &self.executed
    }

    pub fn cycle_stats(&self) -> &[CycleStats] {
        &self.cycles
    }

    pub fn at_goal(&self) -> bool {
        goal_reached(&self.robot(), self.goal, self.goal_radius)
    }

    /// Run cycles until the robot reaches the goal or time runs out.
    pub fn run(&mut self) -> PlanOutcome {
        let termination = loop {
            if self.at_goal() {
                break Termination::Reached;
            }
            if self.time() >= self.cfg.timeout - 1e-9 {
                break Termination::Timeout;
            }
            self.cycle(self.cfg.cycle_budget);
        };
        let trajectory = Trajectory::from_points(self.executed.clone(), self.dt);
        PlanOutcome {
            variant: self.cfg.variant,
            seed: self.cfg.seed,
            success: termination == Termination::Reached,
            termination,
            execution_time: self.time(),
            cycles: self.step,
            trajectory_length: trajectory_length(&trajectory, self.dt),
            trajectory,
            stats: PlanStats {
                nodes_created: self.tree.created(),
                region_updates: self.sampler.region_updates(),
                generator_fallback: self.sampler.fallback_engaged(),
                cycles: self.cycles.clone(),
                samples: self.sampler.take_trace(),
            },
        }
    }

    /// One planning cycle with `budget` growth iterations, then one robot move.
    pub fn cycle(&mut self, budget: usize) -> &CycleStats {
        let t = self.time();
        for ob in &mut self.obstacles {
            ob.observe_until(t);
        }
        let snapshot = WorldSnapshot::new(
            Arc::clone(&self.map),
            &self.obstacles,
            t,
            self.horizon,
            self.cfg.robot_radius,
            self.cfg.risk,
        );
        let robot = self.robot();
        let robot_control = self.tree.node(self.robot_node).control;
        if snapshot.collision_prob(robot.position(), t) > self.cfg.p_max {
            // Stop where we are and throw away plans made from this node.
            self.tree.restart(robot, Control::ZERO, self.step);
            self.robot_node = self.tree.root();
        }
        let report = self.tree.prune_invalid(self.robot_node, &snapshot, self.cfg.p_max);
        self.index.rebuild(&self.tree);
        let before = self.tree.created();
        let guided_before = self.guidance.is_some();
        let mut ops_left = if self.subtrees.is_some() {
            self.cfg.multitree.cycle_ops.unwrap_or(budget)
        } else {
            0
        };
        let mut attempts = 0;
        while attempts < budget {
            match self.iterate(&snapshot, ops_left > 0) {
                Growth::Subtree => ops_left -= 1,
                Growth::Root(added) => {
                    attempts += 1;
                    if added.is_some_and(|id| goal_reached(&self.tree.node(id).state, self.goal, self.goal_radius)) {
                        break;
                    }
                }
            }
        }
        let added = self.tree.created() - before;
        let best = self.tree.select_best(self.goal, self.cfg.weights);
        let stopped = best.node_ids.len() < 2;
        self.step += 1;
        let mut evaded = false;
        if stopped {
            let (state, control) = self.hold_or_evade(&snapshot, &robot, robot_control);
            evaded = control != Control::ZERO;
            self.tree.restart(state, control, self.step);
            self.robot_node = self.tree.root();
        } else {
            self.robot_node = best.node_ids[1];
        }
        let node = self.tree.node(self.robot_node);
        self.executed.push(TrajectoryPoint::new(node.state, node.control, node.t));
        self.cycles.push(CycleStats {
            cycle: self.step - 1,
            t,
            tree_nodes: self.tree.len(),
            added,
            pruned: report.pruned,
            rerooted: report.rerooted,
            subtrees: self.subtrees.as_ref().map_or(0, SubTreeSet::len),
            subtree_nodes: self.subtrees.as_ref().map_or(0, SubTreeSet::node_count),
            region_version: self.sampler.version(),
            bias: self.sampler.bias(),
            guided: guided_before || self.guidance.is_some(),
            stopped,
            evaded,
        });
        self.cycles.last().expect("just pushed")
    }

    /// Without a trajectory the robot holds position, unless holding is
    /// predicted to breach the risk gate within the rollout depth. Then it
    /// samples short control sequences and takes the first control of the one
    /// that keeps the largest predicted clearance from the moving obstacles.
    /// Evasion may reverse as far as `v_min` allows.
    fn hold_or_evade(&mut self, snapshot: &WorldSnapshot, from: &State, control: Control) -> (State, Control) {
        const ROLLOUTS: usize = 96;
        const DEPTH: usize = 6;
        let t_next = self.step as f64 * self.dt;
        if (0..DEPTH).all(|k| snapshot.collision_prob(from.position(), t_next + k as f64 * self.dt) <= self.cfg.p_max) {
            return (*from, Control::ZERO);
        }
        let hold_clearance = (0..DEPTH)
            .map(|k| snapshot.predicted_clearance(from.position(), t_next + k as f64 * self.dt))
            .fold(f64::INFINITY, f64::min);
        let mut best = (hold_clearance, *from, Control::ZERO);
        let limits = ControlLimits {
            v_min: -self.cfg.limits.v_max,
            ..self.cfg.limits
        };
        for _ in 0..ROLLOUTS {
            let (mut s, mut u) = (*from, control);
            let mut first = None;
            let mut worst = f64::INFINITY;
            for k in 0..DEPTH {
                u = reachable_controls(u, &limits, &mut self.rng)[0];
                if snapshot.arc_static_prob(&s, u, self.dt) >= 1.0 {
                    worst = f64::NEG_INFINITY;
                    break;
                }
                s = propagate(&s, u, self.dt);
                first.get_or_insert((s, u));
                worst = worst.min(snapshot.predicted_clearance(s.position(), t_next + k as f64 * self.dt));
            }
            if let Some((s1, u1)) = first {
                if worst > best.0 {
                    best = (worst, s1, u1);
                }
            }
        }
        (best.1, best.2)
    }

    fn extend_root(&mut self, target: Vec2, snapshot: &WorldSnapshot) -> Option<NodeId> {
        let id = self.tree.extend(
            target,
            snapshot,
            &self.cfg.limits,
            self.cfg.weights,
            self.cfg.p_max,
            &mut self.rng,
        )?;
        self.index.insert(self.tree.node(id).state.position());
        Some(id)
    }

    /// One growth iteration. Guidance steps and root extensions report the
    /// node they added; with `subtree_ops` false the subtrees are frozen and
    /// every sample goes to the root tree.
    fn iterate(&mut self, snapshot: &WorldSnapshot, subtree_ops: bool) -> Growth {
        if let Some(mut g) = self.guidance.take() {
            let mut set = self.subtrees.take().expect("guidance implies subtrees");
            let mut added = None;
            let (omega, eps) = (self.cfg.multitree.omega, self.eps_guid);
            let step = g.step(&mut set, omega, eps, |target| {
                added = self.extend_root(target, snapshot);
                added.map(|id| self.tree.node(id).state.position())
            });
            self.subtrees = Some(set);
            match step {
                GuidanceStep::Attempted => {
                    self.guidance = Some(g);
                    return Growth::Root(added);
                }
                GuidanceStep::Reached => return Growth::Root(added),
                GuidanceStep::Exhausted => {}
            }
        }
        let q = self.sampler.sample(&self.robot(), &mut self.rng).position();
        let closest = match &self.subtrees {
            Some(set) if subtree_ops => set.find_closest_tree(&self.tree, q),
            _ => 0,
        };
        let growth = if closest == 0 {
            Growth::Root(self.extend_root(q, snapshot))
        } else {
            let set = self.subtrees.as_mut().expect("closest subtree exists");
            match self.features.subtrees {
                SubtreeMode::GoalOnly => {
                    set.extend_goal_tree(&self.map, q);
                }
                _ => {
                    set.multi_search(&self.map, q);
                }
            }
            Growth::Subtree
        };
        if let Some(set) = self.subtrees.as_mut() {
            if let Some((id, node)) = set.meet(&self.index, self.cfg.multitree.d_meet) {
                self.guidance = Some(set.start_guidance(id, node));
            }
        }
        growth
    }

    /// Write `root_tree.csv` and (when present) `subtrees.csv` into `dir`.
    pub fn dump_trees(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        self.tree.write_csv(fs::File::create(dir.join("root_tree.csv"))?)?;
        if let Some(set) = &self.subtrees {
            set.write_csv(fs::File::create(dir.join("subtrees.csv"))?)?;
        }
        Ok(())
    }
}
