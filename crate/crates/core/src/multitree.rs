//! Space trees grown from the goal and from isolated samples. They merge
//! when they come within reach of each other and, once one meets the
//! root tree, their nodes become a queue of growth targets for it.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::timetree::TimeTree;
use crate::world::{segment_static_free, static_collision_prob, StaticMap, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiTreeConfig {
    /// Spawn and merge radius, meters.
    pub rho: f64,
    /// Distance at which a subtree meets the root tree, meters.
    pub d_meet: f64,
    /// Failed attempts allowed per guidance target.
    pub omega: usize,
    /// Guidance target tolerance; the goal radius when unset.
    pub eps_guid: Option<f64>,
    /// Extension step, meters; `3 * resolution` when unset.
    pub step_len: Option<f64>,
    /// Subtree operations per planning cycle, on top of the root tree's
    /// budget; the cycle budget when unset.
    pub cycle_ops: Option<usize>,
}

impl Default for MultiTreeConfig {
    fn default() -> Self {
        MultiTreeConfig {
            rho: 1.0,
            d_meet: 1.0,
            omega: 20,
            eps_guid: None,
            step_len: None,
            cycle_ops: None,
        }
    }
}

impl MultiTreeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rho > 0.0 && self.d_meet > 0.0) {
            return Err("multitree.rho and multitree.d_meet must be > 0".into());
        }
        if self.step_len.is_some_and(|s| !(s > 0.0)) || self.eps_guid.is_some_and(|e| !(e > 0.0)) {
            return Err("multitree.step_len and multitree.eps_guid must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtreeMode {
    None,
    /// A single goal tree that extends toward samples and never spawns.
    GoalOnly,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubNode {
    pub pos: Vec2,
    pub parent: Option<usize>,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubTree {
    pub id: usize,
    pub nodes: Vec<SubNode>,
    pub contains_goal: bool,
}

impl SubTree {
    fn single(id: usize, pos: Vec2, contains_goal: bool) -> Self {
        SubTree {
            id,
            nodes: vec![SubNode {
                pos,
                parent: None,
                alive: true,
            }],
            contains_goal,
        }
    }

    pub fn alive(&self) -> impl Iterator<Item = (usize, &SubNode)> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.alive)
    }

    pub fn len(&self) -> usize {
        self.alive().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn root(&self) -> Option<usize> {
        self.alive().find(|(_, n)| n.parent.is_none()).map(|(i, _)| i)
    }

    /// Nearest live node and its distance; ties go to the lowest index.
    pub fn nearest(&self, q: Vec2) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, n) in self.alive() {
            let d = (n.pos - q).norm();
            if best.is_none_or(|b| d < b.1) {
                best = Some((i, d));
            }
        }
        best
    }

    fn add(&mut self, parent: usize, pos: Vec2) -> usize {
        self.nodes.push(SubNode {
            pos,
            parent: Some(parent),
            alive: true,
        });
        self.nodes.len() - 1
    }

    /// Make `at` the root by reversing the parent chain above it.
    fn reroot(&mut self, at: usize) {
        let mut prev = None;
        let mut cur = Some(at);
        while let Some(c) = cur {
            let next = self.nodes[c].parent;
            self.nodes[c].parent = prev;
            prev = Some(c);
            cur = next;
        }
    }

    fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.alive() {
            if let Some(p) = n.parent {
                out[p].push(i);
            }
        }
        out
    }

    fn delete_subtree(&mut self, at: usize) {
        let children = self.children();
        let mut stack = vec![at];
        while let Some(i) = stack.pop() {
            self.nodes[i].alive = false;
            stack.extend(children[i].iter().copied());
        }
    }

    /// Live node indices in BFS order from `from` over tree edges.
    fn bfs_from(&self, from: usize) -> Vec<usize> {
        let children = self.children();
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(i) = queue.pop_front() {
            out.push(i);
            let parent = self.nodes[i].parent.into_iter();
            for j in children[i].iter().copied().chain(parent) {
                if !seen[j] && self.nodes[j].alive {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out
    }

    /// Append `other` rerooted at `other_node`, hanging it below `attach_to`.
    fn absorb(&mut self, mut other: SubTree, other_node: usize, attach_to: usize) {
        other.reroot(other_node);
        let offset = self.nodes.len();
        for n in &other.nodes {
            self.nodes.push(SubNode {
                pos: n.pos,
                parent: n.parent.map(|p| p + offset),
                alive: n.alive,
            });
        }
        self.nodes[offset + other_node].parent = Some(attach_to);
        self.contains_goal |= other.contains_goal;
    }
}

/// What a [`SubTreeSet::multi_search`] call did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchEvent {
    Spawned(usize),
    Extended(usize),
    Merged { survivor: usize, absorbed: usize },
    Blocked,
}

#[derive(Debug, Clone)]
pub struct SubTreeSet {
    trees: Vec<SubTree>,
    next_id: usize,
    rho: f64,
    step_len: f64,
    clearance: f64,
}

impl SubTreeSet {
    /// A set holding only the goal tree (id 1; the root tree is id 0).
    pub fn new(goal: Vec2, rho: f64, step_len: f64, clearance: f64) -> Self {
        SubTreeSet {
            trees: vec![SubTree::single(1, goal, true)],
            next_id: 2,
            rho,
            step_len,
            clearance,
        }
    }

    pub fn trees(&self) -> &[SubTree] {
        &self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.trees.iter().map(SubTree::len).sum()
    }

    pub fn get(&self, id: usize) -> Option<&SubTree> {
        self.trees.iter().find(|t| t.id == id)
    }

    fn position(&self, id: usize) -> usize {
        self.trees.iter().position(|t| t.id == id).expect("tree exists")
    }

    pub fn goal_tree(&self) -> &SubTree {
        self.trees.iter().find(|t| t.contains_goal).expect("goal tree exists")
    }

    fn point_free(&self, map: &StaticMap, p: Vec2) -> bool {
        static_collision_prob(map, p, self.clearance) < 0.5
    }

    fn segment_free(&self, map: &StaticMap, a: Vec2, b: Vec2) -> bool {
        segment_static_free(map, a, b, self.clearance)
    }

    /// Tree owning the node nearest to `q`: 0 for the root tree, else a
    /// subtree id. Ties go to the lowest id.
    pub fn find_closest_tree(&self, root: &TimeTree, q: Vec2) -> usize {
        let (_, mut best_d) = root.nearest_euclidean(q);
        let mut best = 0;
        for t in &self.trees {
            if let Some((_, d)) = t.nearest(q) {
                if d < best_d {
                    best_d = d;
                    best = t.id;
                }
            }
        }
        best
    }

    /// Grow tree `id` one step from its node nearest to `q`.
    fn step_toward(&mut self, map: &StaticMap, id: usize, q: Vec2) -> Option<usize> {
        let ti = self.position(id);
        let (from, d) = self.trees[ti].nearest(q)?;
        if d < 1e-9 {
            return None;
        }
        let a = self.trees[ti].nodes[from].pos;
        let p = a + (q - a) * (self.step_len.min(d) / d);
        if !self.segment_free(map, a, p) {
            return None;
        }
        Some(self.trees[ti].add(from, p))
    }

    /// Single-tree growth used when only the goal tree exists.
    pub fn extend_goal_tree(&mut self, map: &StaticMap, q: Vec2) -> SearchEvent {
        let id = self.goal_tree().id;
        match self.step_toward(map, id, q) {
            Some(_) => SearchEvent::Extended(id),
            None => SearchEvent::Blocked,
        }
    }

    /// Spawn, extend or bridge depending on how many trees lie within `rho` of `q`.
    pub fn multi_search(&mut self, map: &StaticMap, q: Vec2) -> SearchEvent {
        let near: Vec<(usize, usize, f64)> = self
            .trees
            .iter()
            .filter_map(|t| t.nearest(q).filter(|n| n.1 < self.rho).map(|(i, d)| (t.id, i, d)))
            .collect();
        match near.len() {
            0 => {
                if !self.point_free(map, q) {
                    return SearchEvent::Blocked;
                }
                let id = self.next_id;
                self.next_id += 1;
                self.trees.push(SubTree::single(id, q, false));
                SearchEvent::Spawned(id)
            }
            1 => self.extend_and_merge(map, near[0].0, q),
            _ => {
                let q_free = self.point_free(map, q);
                let linkable: Vec<(usize, usize)> = near
                    .iter()
                    .filter(|(id, i, _)| {
                        let t = &self.trees[self.position(*id)];
                        q_free && self.segment_free(map, t.nodes[*i].pos, q)
                    })
                    .map(|&(id, i, _)| (id, i))
                    .collect();
                if linkable.is_empty() {
                    let closest = near
                        .iter()
                        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
                        .expect("non-empty");
                    return self.extend_and_merge(map, closest.0, q);
                }
                let survivor = linkable
                    .iter()
                    .find(|(id, _)| self.get(*id).is_some_and(|t| t.contains_goal))
                    .or_else(|| linkable.first())
                    .copied()
                    .expect("non-empty");
                let si = self.position(survivor.0);
                let q_idx = self.trees[si].add(survivor.1, q);
                let mut absorbed = 0;
                for &(id, node) in &linkable {
                    if id == survivor.0 {
                        continue;
                    }
                    let other = self.trees.remove(self.position(id));
                    let si = self.position(survivor.0);
                    self.trees[si].absorb(other, node, q_idx);
                    absorbed += 1;
                }
                let (id, _) = self.merge_from(map, survivor.0, q_idx);
                SearchEvent::Merged { survivor: id, absorbed }
            }
        }
    }

    fn extend_and_merge(&mut self, map: &StaticMap, id: usize, q: Vec2) -> SearchEvent {
        match self.step_toward(map, id, q) {
            Some(node) => {
                let before = self.trees.len();
                let (survivor, _) = self.merge_from(map, id, node);
                if self.trees.len() < before {
                    SearchEvent::Merged {
                        survivor,
                        absorbed: before - self.trees.len(),
                    }
                } else {
                    SearchEvent::Extended(id)
                }
            }
            None => SearchEvent::Blocked,
        }
    }

    /// Merge every tree that can link to the new node `(id, node)` with a
    /// collision-free segment shorter than `rho`. Returns where the node
    /// ended up.
    fn merge_from(&mut self, map: &StaticMap, mut id: usize, mut node: usize) -> (usize, usize) {
        let mut k = 0;
        while k < self.trees.len() {
            if self.trees[k].id == id {
                k += 1;
                continue;
            }
            let p = self.trees[self.position(id)].nodes[node].pos;
            let mut cands: Vec<(f64, usize)> = self.trees[k]
                .alive()
                .map(|(i, n)| ((n.pos - p).norm(), i))
                .filter(|c| c.0 < self.rho)
                .collect();
            cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let link = cands
                .into_iter()
                .find(|&(_, i)| self.segment_free(map, p, self.trees[k].nodes[i].pos));
            let Some((_, other_node)) = link else {
                k += 1;
                continue;
            };
            let other_id = self.trees[k].id;
            let ours = self.get(id).expect("tree exists");
            let keep_ours = ours.contains_goal || (!self.trees[k].contains_goal && id < other_id);
            if keep_ours {
                let other = self.trees.remove(k);
                let si = self.position(id);
                self.trees[si].absorb(other, other_node, node);
            } else {
                let ours = self.trees.remove(self.position(id));
                let oi = self.position(other_id);
                let offset = self.trees[oi].nodes.len();
                self.trees[oi].absorb(ours, node, other_node);
                id = other_id;
                node += offset;
            }
            // Indices shifted; rescan from the start.
            k = 0;
        }
        (id, node)
    }

    /// First subtree (by id) with a node within `d_meet` of the root tree,
    /// with its node nearest the root tree.
    pub fn meet(&self, index: &RootIndex, d_meet: f64) -> Option<(usize, usize)> {
        for t in &self.trees {
            let mut best: Option<(usize, f64)> = None;
            for (i, n) in t.alive() {
                if let Some(d) = index.nearest_within(n.pos, d_meet) {
                    if best.is_none_or(|b| d < b.1) {
                        best = Some((i, d));
                    }
                }
            }
            if let Some((i, _)) = best {
                return Some((t.id, i));
            }
        }
        None
    }

    /// Open a guidance session on subtree `id` starting at `node`. A non-goal
    /// subtree leaves the set; its nodes are used once each.
    pub fn start_guidance(&mut self, id: usize, node: usize) -> Guidance {
        let ti = self.position(id);
        if self.trees[ti].contains_goal {
            let t = &self.trees[ti];
            let mut chain = vec![node];
            let mut cur = node;
            while let Some(p) = t.nodes[cur].parent {
                chain.push(p);
                cur = p;
            }
            let targets = chain.iter().map(|&i| (t.nodes[i].pos, Some(i))).collect();
            Guidance {
                tree: Some(id),
                targets,
                next: 0,
                attempts: 0,
            }
        } else {
            let t = self.trees.remove(ti);
            let targets = t.bfs_from(node).into_iter().map(|i| (t.nodes[i].pos, None)).collect();
            Guidance {
                tree: None,
                targets,
                next: 0,
                attempts: 0,
            }
        }
    }

    fn consume(&mut self, id: usize, node: usize) {
        let ti = self.position(id);
        if self.trees[ti].nodes[node].parent.is_some() {
            self.trees[ti].delete_subtree(node);
        }
    }

    /// Structural checks: one goal tree; each tree a single connected,
    /// acyclic component; edges statically free; no linkable pair of trees.
    pub fn check_invariants(&self, map: &StaticMap) -> Result<(), String> {
        if self.trees.iter().filter(|t| t.contains_goal).count() != 1 {
            return Err("expected exactly one goal tree".into());
        }
        for t in &self.trees {
            let roots = t.alive().filter(|(_, n)| n.parent.is_none()).count();
            if roots != 1 {
                return Err(format!("tree {} has {roots} roots", t.id));
            }
            for (i, n) in t.alive() {
                let mut cur = i;
                let mut steps = 0;
                while let Some(p) = t.nodes[cur].parent {
                    if !t.nodes[p].alive {
                        return Err(format!("tree {} node {i} has a dead ancestor", t.id));
                    }
                    cur = p;
                    steps += 1;
                    if steps > t.nodes.len() {
                        return Err(format!("tree {} has a cycle", t.id));
                    }
                }
                if let Some(p) = n.parent {
                    if !segment_static_free(map, t.nodes[p].pos, n.pos, 0.0) {
                        return Err(format!("tree {} edge {p}->{i} hits a static obstacle", t.id));
                    }
                }
            }
        }
        for (a, ta) in self.trees.iter().enumerate() {
            for tb in &self.trees[a + 1..] {
                for (_, na) in ta.alive() {
                    for (_, nb) in tb.alive() {
                        if (na.pos - nb.pos).norm() < self.rho && self.segment_free(map, na.pos, nb.pos) {
                            return Err(format!("trees {} and {} are linkable", ta.id, tb.id));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// CSV dump: `tree,id,parent,x,y,theta,N`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "tree,id,parent,x,y,theta,N")?;
        for t in &self.trees {
            for (i, n) in t.alive() {
                let mut depth = 0;
                let mut cur = i;
                while let Some(p) = t.nodes[cur].parent {
                    depth += 1;
                    cur = p;
                }
                let parent = n.parent.map(|p| p.to_string()).unwrap_or_default();
                let theta = match n.parent {
                    Some(p) => {
                        let d = n.pos - t.nodes[p].pos;
                        d.y.atan2(d.x)
                    }
                    None => 0.0,
                };
                writeln!(out, "{},{},{},{},{},{},{}", t.id, i, parent, n.pos.x, n.pos.y, theta, depth)?;
            }
        }
        Ok(())
    }
}

/// Outcome of one guidance step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceStep {
    /// One extension attempt was made.
    Attempted,
    /// The attempt reached the goal tree's root.
    Reached,
    /// No targets remain; no attempt was made.
    Exhausted,
}

/// A queue of root-tree growth targets taken from a subtree.
#[derive(Debug, Clone, PartialEq)]
pub struct Guidance {
    /// Goal tree id, or `None` for a detached one-shot subtree.
    tree: Option<usize>,
    targets: Vec<(Vec2, Option<usize>)>,
    next: usize,
    attempts: usize,
}

impl Guidance {
    pub fn remaining(&self) -> usize {
        self.targets.len() - self.next
    }

    pub fn is_goal_guided(&self) -> bool {
        self.tree.is_some()
    }

    /// Make at most one extension attempt. `extend` grows the root tree
    /// toward a target and returns the new node's position.
    pub fn step(
        &mut self,
        set: &mut SubTreeSet,
        omega: usize,
        eps: f64,
        mut extend: impl FnMut(Vec2) -> Option<Vec2>,
    ) -> GuidanceStep {
        loop {
            if self.next >= self.targets.len() {
                return GuidanceStep::Exhausted;
            }
            if self.tree.is_some() && self.attempts >= omega {
                self.retire(set);
                continue;
            }
            break;
        }
        let (target, node) = self.targets[self.next];
        self.attempts += 1;
        let reached = extend(target);
        match self.tree {
            None => {
                self.next += 1;
                self.attempts = 0;
                GuidanceStep::Attempted
            }
            Some(_) => {
                if reached.is_some_and(|p| (p - target).norm() < eps) {
                    let is_root = self.next + 1 == self.targets.len();
                    self.retire(set);
                    if is_root && node.is_some() {
                        return GuidanceStep::Reached;
                    }
                }
                GuidanceStep::Attempted
            }
        }
    }

    fn retire(&mut self, set: &mut SubTreeSet) {
        if let (Some(id), Some(node)) = (self.tree, self.targets[self.next].1) {
            if set.get(id).is_some() {
                set.consume(id, node);
            }
        }
        self.next += 1;
        self.attempts = 0;
    }
}

/// Bucketed root-tree positions for meet queries.
#[derive(Debug, Clone, Default)]
pub struct RootIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<Vec2>>,
}

impl RootIndex {
    pub fn new(cell: f64) -> Self {
        RootIndex {
            cell: cell.max(1e-6),
            buckets: HashMap::new(),
        }
    }

    fn key(&self, p: Vec2) -> (i64, i64) {
        ((p.x / self.cell).floor() as i64, (p.y / self.cell).floor() as i64)
    }

    pub fn rebuild(&mut self, tree: &TimeTree) {
        self.buckets.clear();
        for p in tree.positions() {
            self.insert(p);
        }
    }

    pub fn insert(&mut self, p: Vec2) {
        let k = self.key(p);
        self.buckets.entry(k).or_default().push(p);
    }

    /// Distance to the nearest indexed point, if one lies strictly within `d`.
    /// `d` must not exceed the bucket size.
    pub fn nearest_within(&self, q: Vec2, d: f64) -> Option<f64> {
        debug_assert!(d <= self.cell + 1e-12);
        let (kx, ky) = self.key(q);
        let mut best: Option<f64> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(b) = self.buckets.get(&(kx + dx, ky + dy)) {
                    for p in b {
                        let dist = (p - q).norm();
                        if dist < d && best.is_none_or(|x| dist < x) {
                            best = Some(dist);
                        }
                    }
                }
            }
        }
        best
    }
}
