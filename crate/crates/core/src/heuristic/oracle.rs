//! Deterministic corridor generator: A* on an inflated grid, then every free
//! cell within a radius of the path.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{HeuristicError, RegionGenerator};
use crate::world::{Cell, StaticMap};

fn disc_offsets(radius: u32) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let r2 = (r * r) as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx as i64 * dx as i64 + dy as i64 * dy as i64) <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Row-major blocked mask: every cell within `clearance` cells (Euclidean)
/// of an occupied cell or of the map border.
pub fn inflate(map: &StaticMap, clearance: u32) -> Vec<bool> {
    let (w, h) = (map.width() as i32, map.height() as i32);
    let mut blocked = vec![false; (w * h) as usize];
    let offsets = disc_offsets(clearance);
    let c = clearance as i32;
    for y in 0..h {
        for x in 0..w {
            let cell = Cell::new(x, y);
            // Off-map cells act as occupied.
            if clearance > 0 && (x < c || y < c || w - 1 - x < c || h - 1 - y < c) {
                blocked[(y * w + x) as usize] = true;
            }
            if map.is_free(cell) {
                continue;
            }
            for &(dx, dy) in &offsets {
                let n = Cell::new(x + dx, y + dy);
                if map.in_bounds(n) {
                    blocked[map.index(n)] = true;
                }
            }
        }
    }
    blocked
}

/// 4-connected unit-cost A* with the Manhattan heuristic; ties broken by
/// lowest `(f, h, cell index)`.
pub fn astar(map: &StaticMap, blocked: &[bool], start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    if !map.in_bounds(start) || !map.in_bounds(goal) || blocked[map.index(start)] || blocked[map.index(goal)] {
        return None;
    }
    let n = map.width() * map.height();
    let manhattan = |c: Cell| ((c.x - goal.x).abs() + (c.y - goal.y).abs()) as u64;
    // Equal-cost ties go to cells nearer the start-goal line, so open space
    // yields a staircase rather than an L.
    let (dx, dy) = (goal.x - start.x, goal.y - start.y);
    let off_line = |c: Cell| ((c.x - start.x) * dy - (c.y - start.y) * dx).unsigned_abs();
    let mut g = vec![u64::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let s = map.index(start);
    g[s] = 0;
    open.push(Reverse((manhattan(start), manhattan(start), 0, s)));
    while let Some(Reverse((_, _, _, i))) = open.pop() {
        if closed[i] {
            continue;
        }
        closed[i] = true;
        let c = map.cell_at(i);
        if c == goal {
            let mut path = vec![c];
            let mut cur = i;
            while parent[cur] != usize::MAX {
                cur = parent[cur];
                path.push(map.cell_at(cur));
            }
            path.reverse();
            return Some(path);
        }
        for nb in c.neighbors4() {
            if !map.in_bounds(nb) {
                continue;
            }
            let j = map.index(nb);
            if blocked[j] || closed[j] {
                continue;
            }
            let cand = g[i] + 1;
            if cand < g[j] {
                g[j] = cand;
                parent[j] = i;
                let h = manhattan(nb);
                open.push(Reverse((cand + h, h, off_line(nb), j)));
            }
        }
    }
    None
}

/// Free cells within `radius` cells of the A* path from `start` to `goal`
/// on the map inflated by `clearance`. Empty when no path exists.
///
/// Free cells inside the inflation band but within `clearance + 1` of either
/// endpoint stay passable, so endpoints hugging a wall can still connect.
pub fn oracle_corridor(map: &StaticMap, start: Cell, goal: Cell, clearance: u32, radius: u32) -> Vec<Cell> {
    if !map.is_free(start) || !map.is_free(goal) {
        return Vec::new();
    }
    let mut blocked = inflate(map, clearance);
    let relax = ((clearance + 1) * (clearance + 1)) as i64;
    for (i, b) in blocked.iter_mut().enumerate() {
        let c = map.cell_at(i);
        if *b && map.is_free(c) && (c.dist2(start) <= relax || c.dist2(goal) <= relax) {
            *b = false;
        }
    }
    let Some(path) = astar(map, &blocked, start, goal) else {
        return Vec::new();
    };
    let mut mask = vec![false; map.width() * map.height()];
    let offsets = disc_offsets(radius);
    for p in &path {
        for &(dx, dy) in &offsets {
            let n = Cell::new(p.x + dx, p.y + dy);
            if map.is_free(n) {
                mask[map.index(n)] = true;
            }
        }
    }
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| map.cell_at(i))
        .collect()
}

/// The built-in generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCorridor {
    pub clearance_cells: u32,
    pub corridor_radius_cells: u32,
}

impl Default for OracleCorridor {
    fn default() -> Self {
        OracleCorridor {
            clearance_cells: 3,
            corridor_radius_cells: 10,
        }
    }
}

impl RegionGenerator for OracleCorridor {
    fn generate(&mut self, map: &StaticMap, start: Cell, goal: Cell) -> Result<Vec<Cell>, HeuristicError> {
        Ok(oracle_corridor(map, start, goal, self.clearance_cells, self.corridor_radius_cells))
    }

    fn name(&self) -> &str {
        "oracle"
    }
}
