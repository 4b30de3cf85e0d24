//! Heuristic regions: a pluggable corridor generator, BFS waypoint
//! extraction, and iterative regeneration until the region connects the
//! query start to the goal.

mod oracle;
mod refresh;
mod wire;

pub use oracle::{astar, inflate, oracle_corridor, OracleCorridor};
pub use refresh::{RefreshMode, RefreshOutcome, RefreshService};
pub use wire::{
    decode_grid, encode_grid, parse_response, serve, ExternalModel, Transport, WireRequest, WireResponse,
};

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;
use thiserror::Error;

use crate::kinematics::State;
use crate::world::{Cell, StaticMap, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeuristicError {
    #[error("heuristic region is empty")]
    EmptyRegion,
    #[error("region generator failure: {0}")]
    GeneratorFailure(String),
}

/// Maps a (start, goal, map) query to a set of promising cells.
pub trait RegionGenerator: Send {
    fn generate(&mut self, map: &StaticMap, start: Cell, goal: Cell) -> Result<Vec<Cell>, HeuristicError>;

    fn name(&self) -> &str;
}

impl<G: RegionGenerator + ?Sized> RegionGenerator for Box<G> {
    fn generate(&mut self, map: &StaticMap, start: Cell, goal: Cell) -> Result<Vec<Cell>, HeuristicError> {
        (**self).generate(map, start, goal)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// A versioned set of map cells.
#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicRegion {
    width: usize,
    height: usize,
    mask: Vec<bool>,
    cells: Vec<Cell>,
    pub version: u64,
    pub source_start: State,
}

impl HeuristicRegion {
    pub fn empty(map: &StaticMap, source_start: State) -> Self {
        HeuristicRegion {
            width: map.width(),
            height: map.height(),
            mask: vec![false; map.width() * map.height()],
            cells: Vec::new(),
            version: 0,
            source_start,
        }
    }

    /// Region over the in-bounds members of `cells`.
    pub fn from_cells(map: &StaticMap, cells: impl IntoIterator<Item = Cell>, source_start: State) -> Self {
        let mut r = Self::empty(map, source_start);
        r.extend(cells);
        r
    }

    pub fn extend(&mut self, cells: impl IntoIterator<Item = Cell>) {
        for c in cells {
            if let Some(i) = self.index(c) {
                if !self.mask[i] {
                    self.mask[i] = true;
                    self.cells.push(c);
                }
            }
        }
        let w = self.width;
        self.cells.sort_unstable_by_key(|c| c.y as usize * w + c.x as usize);
    }

    fn index(&self, c: Cell) -> Option<usize> {
        (c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height)
            .then(|| c.y as usize * self.width + c.x as usize)
    }

    fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    pub fn contains(&self, c: Cell) -> bool {
        self.index(c).is_some_and(|i| self.mask[i])
    }

    /// Member cells in row-major order.
    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// BFS cell chain through a region, as cells and their centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoints {
    pub cells: Vec<Cell>,
    pub positions: Vec<Vec2>,
    /// False when the chain is only the goal (generation gave up).
    pub connected: bool,
}

impl Waypoints {
    pub fn from_cells(map: &StaticMap, cells: Vec<Cell>, connected: bool) -> Self {
        let positions = cells.iter().map(|&c| map.cell_center(c)).collect();
        Waypoints {
            cells,
            positions,
            connected,
        }
    }

    pub fn goal_only(map: &StaticMap, goal: Cell) -> Self {
        Self::from_cells(map, vec![goal], false)
    }

    /// Keep every `stride`-th waypoint, always including the last.
    pub fn thinned(&self, stride: usize) -> Waypoints {
        let stride = stride.max(1);
        let n = self.cells.len();
        let keep: Vec<usize> = (0..n).filter(|i| i % stride == 0 || *i + 1 == n).collect();
        Waypoints {
            cells: keep.iter().map(|&i| self.cells[i]).collect(),
            positions: keep.iter().map(|&i| self.positions[i]).collect(),
            connected: self.connected,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// Region cell nearest to `c` (lowest row-major index on ties).
fn nearest_region_cell(region: &HeuristicRegion, c: Cell) -> Option<Cell> {
    region.cells().iter().copied().min_by_key(|r| r.dist2(c))
}

/// Either the BFS path, or the reachable cell nearest the goal.
fn bfs(region: &HeuristicRegion, start: Cell, goal: Cell) -> Result<Vec<Cell>, Option<Cell>> {
    let Some(from) = nearest_region_cell(region, start) else {
        return Err(None);
    };
    let (w, h) = (region.width, region.height);
    let idx = |c: Cell| c.y as usize * w + c.x as usize;
    let mut parent: Vec<Option<usize>> = vec![None; w * h];
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([from]);
    seen[idx(from)] = true;
    let mut frontier = from;
    while let Some(c) = queue.pop_front() {
        if c == goal {
            let mut path = vec![c];
            let mut cur = idx(c);
            while let Some(p) = parent[cur] {
                path.push(region.cell_at(p));
                cur = p;
            }
            path.reverse();
            return Ok(path);
        }
        let (dc, df) = (c.dist2(goal), frontier.dist2(goal));
        if dc < df || (dc == df && idx(c) < idx(frontier)) {
            frontier = c;
        }
        for n in c.neighbors4() {
            if region.contains(n) && !seen[idx(n)] {
                seen[idx(n)] = true;
                parent[idx(n)] = Some(idx(c));
                queue.push_back(n);
            }
        }
    }
    Err(Some(frontier))
}

/// Shortest 4-connected chain through `region` from the region cell nearest
/// `start` to `goal`.
pub fn bfs_waypoints(region: &HeuristicRegion, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    bfs(region, start, goal).ok()
}

/// Result of [`net_infer`].
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub region: HeuristicRegion,
    pub waypoints: Waypoints,
    /// Generator queries issued.
    pub iterations: usize,
}

/// Query the generator repeatedly, accumulating cells, until the region
/// links `last` to the goal or `max_iter` queries have been made. Each retry
/// starts from the reachable region cell that came nearest the goal.
pub fn net_infer(
    last: &State,
    goal: Vec2,
    map: &StaticMap,
    generator: &mut dyn RegionGenerator,
    max_iter: usize,
) -> Result<Inference, HeuristicError> {
    let start = map.clamp_cell(last.position());
    let goal_cell = map.clamp_cell(goal);
    let mut region = HeuristicRegion::empty(map, *last);
    let mut query = start;
    for iteration in 1..=max_iter.max(1) {
        let cells = generator.generate(map, query, goal_cell)?;
        region.extend(cells);
        match bfs(&region, start, goal_cell) {
            Ok(path) => {
                return Ok(Inference {
                    waypoints: Waypoints::from_cells(map, path, true),
                    region,
                    iterations: iteration,
                })
            }
            Err(frontier) => query = frontier.unwrap_or(start),
        }
    }
    Ok(Inference {
        waypoints: Waypoints::goal_only(map, goal_cell),
        region,
        iterations: max_iter.max(1),
    })
}

/// Uniform over region cells, then uniform inside the chosen cell; heading
/// uniform in `[-pi, pi)`.
pub fn region_sample<R: Rng + ?Sized>(region: &HeuristicRegion, map: &StaticMap, rng: &mut R) -> Result<State, HeuristicError> {
    if region.is_empty() {
        return Err(HeuristicError::EmptyRegion);
    }
    let c = region.cells()[rng.gen_range(0..region.len())];
    let res = map.resolution();
    let x = (c.x as f64 + rng.gen::<f64>()) * res;
    let y = (c.y as f64 + rng.gen::<f64>()) * res;
    let theta = -PI + 2.0 * PI * rng.gen::<f64>();
    Ok(State::new(x, y, theta))
}
