//! Time-parameterized, risk-gated search tree.
//!
//! Every node carries the step index at which the robot would occupy it, so
//! `t = t_root + depth * dt` holds exactly. Growth draws candidate controls
//! around the parent's control and keeps only candidates whose collision
//! risk stays under `p_max`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::{arc_length, cost, propagate, reachable_controls, velocity_of, Control, ControlLimits, CostWeights, State};
use crate::world::{Vec2, WorldSnapshot};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeNode {
    pub id: NodeId,
    pub state: State,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: u32,
    /// Global time step; `t = step * dt`.
    pub step: u64,
    pub t: f64,
    /// Control applied from the parent to reach this node.
    pub control: Control,
    pub risk: f64,
}

impl TimeNode {
    pub fn velocity(&self) -> Vec2 {
        velocity_of(&self.state, self.control)
    }
}

/// Outcome of [`TimeTree::prune_invalid`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PruneReport {
    /// Nodes dropped because they do not descend from the new root.
    pub rerooted: usize,
    /// Nodes dropped because they (or an ancestor) exceed the risk gate.
    pub pruned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub w: f64,
}

impl TrajectoryPoint {
    pub fn new(state: State, control: Control, t: f64) -> Self {
        TrajectoryPoint {
            t,
            x: state.x,
            y: state.y,
            theta: state.theta,
            v: control.v,
            w: control.w,
        }
    }

    pub fn state(&self) -> State {
        State {
            x: self.x,
            y: self.y,
            theta: self.theta,
        }
    }

    pub fn control(&self) -> Control {
        Control::new(self.v, self.w)
    }
}

/// A timed state sequence; each point's control is the one that reached it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub total_length: f64,
    #[serde(skip)]
    pub node_ids: Vec<NodeId>,
}

impl Trajectory {
    pub fn from_points(points: Vec<TrajectoryPoint>, dt: f64) -> Self {
        let total_length = points.iter().skip(1).map(|p| arc_length(p.control(), dt)).sum();
        Trajectory {
            points,
            total_length,
            node_ids: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_state(&self) -> Option<State> {
        self.points.last().map(TrajectoryPoint::state)
    }
}

/// Executed distance: the sum of per-segment arc lengths.
pub fn trajectory_length(traj: &Trajectory, dt: f64) -> f64 {
    traj.points.iter().skip(1).map(|p| arc_length(p.control(), dt)).sum()
}

/// Strict goal-region test.
pub fn goal_reached(state: &State, goal: Vec2, goal_radius: f64) -> bool {
    (state.position() - goal).norm() < goal_radius
}

#[derive(Debug, Clone)]
pub struct TimeTree {
    nodes: Vec<Option<TimeNode>>,
    alive: Vec<NodeId>,
    root: NodeId,
    dt: f64,
}

impl TimeTree {
    pub fn new(state: State, control: Control, step: u64, dt: f64) -> Self {
        let mut tree = TimeTree {
            nodes: Vec::new(),
            alive: Vec::new(),
            root: 0,
            dt,
        };
        tree.restart(state, control, step);
        tree
    }

    /// Drop every node and start over from a single root.
    pub fn restart(&mut self, state: State, control: Control, step: u64) {
        for id in self.alive.drain(..) {
            self.nodes[id] = None;
        }
        let id = self.nodes.len();
        self.nodes.push(Some(TimeNode {
            id,
            state,
            parent: None,
            children: Vec::new(),
            depth: 0,
            step,
            t: step as f64 * self.dt,
            control,
            risk: 0.0,
        }));
        self.alive.push(id);
        self.root = id;
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn root_node(&self) -> &TimeNode {
        self.node(self.root)
    }

    pub fn t_root(&self) -> f64 {
        self.root_node().t
    }

    pub fn len(&self) -> usize {
        self.alive.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alive.is_empty()
    }

    /// Total node ids handed out so far.
    pub fn created(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.get(id).is_some_and(Option::is_some)
    }

    pub fn node(&self, id: NodeId) -> &TimeNode {
        self.nodes[id].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut TimeNode {
        self.nodes[id].as_mut().expect("live node")
    }

    /// Live nodes in id order.
    pub fn iter(&self) -> impl Iterator<Item = &TimeNode> + '_ {
        self.alive.iter().map(move |&id| self.node(id))
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.iter().map(|n| n.state.position())
    }

    pub fn set_root_risk(&mut self, risk: f64) {
        let root = self.root;
        self.node_mut(root).risk = risk;
    }

    pub fn insert_child(&mut self, parent: NodeId, state: State, control: Control, risk: f64) -> NodeId {
        let (depth, step) = {
            let p = self.node(parent);
            (p.depth + 1, p.step + 1)
        };
        let id = self.nodes.len();
        self.nodes.push(Some(TimeNode {
            id,
            state,
            parent: Some(parent),
            children: Vec::new(),
            depth,
            step,
            t: step as f64 * self.dt,
            control,
            risk,
        }));
        self.node_mut(parent).children.push(id);
        self.alive.push(id);
        id
    }

    /// Node minimizing the transition cost toward `target`; ties go to the lowest id.
    pub fn nearest_by_cost(&self, target: Vec2, weights: CostWeights) -> NodeId {
        let mut best = (f64::INFINITY, self.root);
        for n in self.iter() {
            let c = cost(&n.state, n.velocity(), target, weights);
            if c < best.0 {
                best = (c, n.id);
            }
        }
        best.1
    }

    /// Euclidean nearest node and its distance.
    pub fn nearest_euclidean(&self, q: Vec2) -> (NodeId, f64) {
        let mut best = (self.root, f64::INFINITY);
        for n in self.iter() {
            let d = (n.state.position() - q).norm();
            if d < best.1 {
                best = (n.id, d);
            }
        }
        best
    }

    /// Grow one node toward `target`. Returns the new node, or `None` when
    /// every candidate control breaches the risk gate.
    #[allow(clippy::too_many_arguments)]
    pub fn extend<R: Rng + ?Sized>(
        &mut self,
        target: Vec2,
        world: &WorldSnapshot,
        limits: &ControlLimits,
        weights: CostWeights,
        p_max: f64,
        rng: &mut R,
    ) -> Option<NodeId> {
        let from = self.nearest_by_cost(target, weights);
        let (state, control, t_next) = {
            let n = self.node(from);
            (n.state, n.control, (n.step + 1) as f64 * self.dt)
        };
        let mut best: Option<(f64, State, Control, f64)> = None;
        for u in reachable_controls(control, limits, rng) {
            let next = propagate(&state, u, self.dt);
            let risk = world.transition_risk(&state, u, self.dt, t_next);
            if risk > p_max {
                continue;
            }
            let d = (next.position() - target).norm();
            if best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, next, u, risk));
            }
        }
        best.map(|(_, s, u, risk)| self.insert_child(from, s, u, risk))
    }

    /// All ids in the subtree rooted at `id`, parents before children.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.node(out[i]).children.iter().copied());
            i += 1;
        }
        out
    }

    /// Re-root at `current`, re-evaluate every remaining node against `world`
    /// and drop each subtree whose root exceeds `p_max`.
    pub fn prune_invalid(&mut self, current: NodeId, world: &WorldSnapshot, p_max: f64) -> PruneReport {
        let keep = self.subtree(current);
        let mut keep_mask = vec![false; self.nodes.len()];
        for &id in &keep {
            keep_mask[id] = true;
        }
        let mut report = PruneReport::default();
        for &id in &self.alive {
            if !keep_mask[id] {
                self.nodes[id] = None;
                report.rerooted += 1;
            }
        }
        self.root = current;
        let root_step = self.node(current).step;
        {
            let root_pos = self.node(current).state.position();
            let t = self.node(current).t;
            let r = world.collision_prob(root_pos, t);
            let root = self.node_mut(current);
            root.parent = None;
            root.depth = 0;
            root.risk = r;
        }
        // `keep` lists parents before children, so a pruned parent is seen first.
        let mut alive = Vec::with_capacity(keep.len());
        alive.push(current);
        for &id in keep.iter().skip(1) {
            let Some(node) = self.nodes[id].as_ref() else { continue };
            let parent = node.parent.expect("non-root has parent");
            if !keep_mask[parent] {
                keep_mask[id] = false;
                self.nodes[id] = None;
                report.pruned += 1;
                continue;
            }
            let ps = self.node(parent).state;
            let (u, t) = (node.control, node.t);
            let risk = world.transition_risk(&ps, u, self.dt, t);
            if risk > p_max {
                keep_mask[id] = false;
                self.nodes[id] = None;
                report.pruned += 1;
                continue;
            }
            let n = self.node_mut(id);
            n.risk = risk;
            n.depth = (n.step - root_step) as u32;
            alive.push(id);
        }
        alive.sort_unstable();
        for &id in &alive {
            let children: Vec<NodeId> = self.node(id).children.iter().copied().filter(|&c| keep_mask[c]).collect();
            self.node_mut(id).children = children;
        }
        self.alive = alive;
        report
    }

    /// Root-to-node chain of ids.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.node(cur).parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn trajectory_to(&self, id: NodeId) -> Trajectory {
        let ids = self.path_to(id);
        let points = ids
            .iter()
            .map(|&i| {
                let n = self.node(i);
                TrajectoryPoint::new(n.state, n.control, n.t)
            })
            .collect();
        let mut traj = Trajectory::from_points(points, self.dt);
        traj.node_ids = ids;
        traj
    }

    /// Path to the leaf with the lowest cost toward `goal`; ties are broken
    /// by lower cumulative risk, then lower id.
    pub fn select_best(&self, goal: Vec2, weights: CostWeights) -> Trajectory {
        let mut cum = vec![0.0; self.nodes.len()];
        let mut best: Option<(f64, f64, NodeId)> = None;
        // Parents always have smaller ids than their children.
        for n in self.iter() {
            cum[n.id] = n.parent.map_or(0.0, |p| cum[p]) + n.risk;
            if !n.children.is_empty() {
                continue;
            }
            let key = (cost(&n.state, n.velocity(), goal, weights), cum[n.id], n.id);
            let better = match best {
                None => true,
                Some(b) => key.0 < b.0 || (key.0 == b.0 && (key.1 < b.1 || (key.1 == b.1 && key.2 < b.2))),
            };
            if better {
                best = Some(key);
            }
        }
        self.trajectory_to(best.map_or(self.root, |b| b.2))
    }

    /// Structural check used by tests and debug assertions.
    pub fn check_invariants(&self) -> Result<(), String> {
        let root = self.root_node();
        if root.parent.is_some() || root.depth != 0 {
            return Err("root has a parent or non-zero depth".into());
        }
        let t_root = root.t;
        let mut seen = 0;
        for n in self.iter() {
            seen += 1;
            if (n.t - (t_root + n.depth as f64 * self.dt)).abs() > 1e-9 {
                return Err(format!("node {} timestamp {} inconsistent with depth {}", n.id, n.t, n.depth));
            }
            if let Some(p) = n.parent {
                if !self.contains(p) {
                    return Err(format!("node {} has dead parent {p}", n.id));
                }
                let pn = self.node(p);
                if pn.depth + 1 != n.depth {
                    return Err(format!("node {} depth delta != 1", n.id));
                }
                if !pn.children.contains(&n.id) {
                    return Err(format!("node {} missing from parent's children", n.id));
                }
            } else if n.id != self.root {
                return Err(format!("second root {}", n.id));
            }
            for &c in &n.children {
                if !self.contains(c) {
                    return Err(format!("node {} lists dead child {c}", n.id));
                }
            }
        }
        // Reachability from the root implies acyclicity given the parent checks.
        if self.subtree(self.root).len() != seen {
            return Err("not every node is reachable from the root".into());
        }
        Ok(())
    }

    /// CSV dump: `id,parent,x,y,theta,t,N,risk`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "id,parent,x,y,theta,t,N,risk")?;
        for n in self.iter() {
            let parent = n.parent.map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                n.id, parent, n.state.x, n.state.y, n.state.theta, n.t, n.depth, n.risk
            )?;
        }
        Ok(())
    }
}
