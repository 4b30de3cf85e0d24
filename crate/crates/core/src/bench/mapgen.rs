//! Synthetic benchmark maps: a regular grid of blocks, scattered discs, or both.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::heuristic::{astar, inflate};
use crate::kinematics::State;
use crate::world::{Cell, DynamicObstacle, Scenario, StaticMap, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFamily {
    Blocks,
    Discs,
    Mixed,
}

impl MapFamily {
    pub const ALL: [MapFamily; 3] = [MapFamily::Blocks, MapFamily::Discs, MapFamily::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            MapFamily::Blocks => "blocks",
            MapFamily::Discs => "discs",
            MapFamily::Mixed => "mixed",
        }
    }
}

impl fmt::Display for MapFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MapFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown map family {s:?} (expected blocks, discs or mixed)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapGenParams {
    pub resolution: f64,
    /// Block side as a fraction of the map side.
    pub block_frac: f64,
    /// Block grid pitch as a fraction of the map side, per family.
    pub blocks_pitch_frac: f64,
    pub mixed_pitch_frac: f64,
    /// Discs per 10^4 cells, per family.
    pub discs_density: f64,
    pub mixed_density: f64,
    /// Inclusive disc radius range, cells.
    pub disc_radius_cells: (u32, u32),
    /// Minimum free gap between any two obstacles or an obstacle and the border, cells.
    pub gap_cells: u32,
    /// Free radius required around start and goal, cells.
    pub endpoint_clearance_cells: u32,
    /// Clearance used for the start-goal connectivity check, cells.
    pub robot_clearance_cells: u32,
    pub max_attempts: usize,
}

impl Default for MapGenParams {
    fn default() -> Self {
        MapGenParams {
            resolution: 0.1,
            block_frac: 0.1,
            blocks_pitch_frac: 0.25,
            mixed_pitch_frac: 1.0 / 3.0,
            discs_density: 16.0,
            mixed_density: 8.0,
            disc_radius_cells: (3, 7),
            gap_cells: 6,
            endpoint_clearance_cells: 4,
            robot_clearance_cells: 2,
            max_attempts: 20,
        }
    }
}

/// Axis-aligned block, inclusive cell bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub min: Cell,
    pub max: Cell,
}

/// Disc obstacle in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedMap {
    pub family: MapFamily,
    pub size: usize,
    pub seed: u64,
    pub map: StaticMap,
    pub start: State,
    pub goal: Vec2,
    pub blocks: Vec<Block>,
    pub discs: Vec<Disc>,
}

impl GeneratedMap {
    pub fn into_scenario(self, obstacles: Vec<DynamicObstacle>, goal_radius: f64, dt: f64, horizon_depth: usize) -> Scenario {
        Scenario {
            map: self.map,
            obstacles,
            start: self.start,
            goal: self.goal,
            goal_radius,
            dt,
            horizon_depth,
        }
    }
}

pub fn gen_map(family: MapFamily, size: usize, seed: u64) -> Result<GeneratedMap, BenchError> {
    gen_map_with(family, size, seed, &MapGenParams::default())
}

/// Deterministic map for `(family, size, seed, params)`. Layouts whose start
/// and goal cannot be placed or connected are redrawn a bounded number of times.
pub fn gen_map_with(family: MapFamily, size: usize, seed: u64, params: &MapGenParams) -> Result<GeneratedMap, BenchError> {
    if size < 20 {
        return Err(BenchError::Generation(format!("map size {size} is below the minimum of 20 cells")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_err = String::new();
    for _ in 0..params.max_attempts.max(1) {
        match attempt(family, size, params, &mut rng) {
            Ok((map, blocks, discs, start, goal)) => {
                return Ok(GeneratedMap {
                    family,
                    size,
                    seed,
                    map,
                    start,
                    goal,
                    blocks,
                    discs,
                })
            }
            Err(e) => last_err = e,
        }
    }
    Err(BenchError::Generation(format!(
        "{family} map of size {size} (seed {seed}): {last_err} after {} attempts",
        params.max_attempts.max(1)
    )))
}

type Attempt = (StaticMap, Vec<Block>, Vec<Disc>, State, Vec2);

fn attempt(family: MapFamily, size: usize, params: &MapGenParams, rng: &mut ChaCha8Rng) -> Result<Attempt, String> {
    let mut map = StaticMap::empty(size, size, params.resolution).map_err(|e| e.to_string())?;
    let mut blocks = Vec::new();
    let mut discs = Vec::new();
    match family {
        MapFamily::Blocks => place_blocks(&mut map, &mut blocks, params.blocks_pitch_frac, params, rng),
        MapFamily::Discs => place_discs(&mut map, &mut discs, params.discs_density, params, rng),
        MapFamily::Mixed => {
            place_blocks(&mut map, &mut blocks, params.mixed_pitch_frac, params, rng);
            place_discs(&mut map, &mut discs, params.mixed_density, params, rng);
        }
    }
    let c = params.endpoint_clearance_cells as i32;
    let start = place_endpoint(&map, Cell::new(c + 1, c + 1), params).ok_or("no free start cell")?;
    let far = size as i32 - c - 2;
    let goal = place_endpoint(&map, Cell::new(far, far), params).ok_or("no free goal cell")?;
    let blocked = inflate(&map, params.robot_clearance_cells);
    if astar(&map, &blocked, start, goal).is_none() {
        return Err("start and goal are not connected".into());
    }
    let (s, g) = (map.cell_center(start), map.cell_center(goal));
    let heading = (g.y - s.y).atan2(g.x - s.x);
    Ok((map, blocks, discs, State::from_position(s, heading), g))
}

fn place_blocks(map: &mut StaticMap, out: &mut Vec<Block>, pitch_frac: f64, params: &MapGenParams, rng: &mut ChaCha8Rng) {
    let size = map.width() as f64;
    let pitch = (pitch_frac * size).max(1.0);
    let side = (params.block_frac * size).round().max(1.0) as i32;
    let n = (size / pitch).floor() as i32;
    let slack = ((pitch - side as f64 - params.gap_cells as f64) / 2.0).floor().max(0.0) as i32;
    for gy in 0..n {
        for gx in 0..n {
            let jx = if slack > 0 { rng.gen_range(-slack..=slack) } else { 0 };
            let jy = if slack > 0 { rng.gen_range(-slack..=slack) } else { 0 };
            let cx = ((gx as f64 + 0.5) * pitch).floor() as i32 + jx;
            let cy = ((gy as f64 + 0.5) * pitch).floor() as i32 + jy;
            let min = Cell::new(cx - side / 2, cy - side / 2);
            let max = Cell::new(min.x + side - 1, min.y + side - 1);
            for y in min.y..=max.y {
                for x in min.x..=max.x {
                    let c = Cell::new(x, y);
                    if map.in_bounds(c) {
                        map.set_prob(c, 1.0);
                    }
                }
            }
            out.push(Block { min, max });
        }
    }
}

fn place_discs(map: &mut StaticMap, out: &mut Vec<Disc>, density: f64, params: &MapGenParams, rng: &mut ChaCha8Rng) {
    let size = map.width() as f64;
    let res = map.resolution();
    let target = (density * size * size / 1e4).round() as usize;
    let gap = params.gap_cells as f64;
    let keep_out = size / 5.0;
    let (rmin, rmax) = params.disc_radius_cells;
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    let mut tries = 0;
    while placed.len() < target && tries < 200 * target.max(1) {
        tries += 1;
        let r = rng.gen_range(rmin..=rmax.max(rmin)) as f64;
        let lo = r + gap;
        let hi = size - r - gap;
        if hi <= lo {
            continue;
        }
        let x = rng.gen_range(lo..hi);
        let y = rng.gen_range(lo..hi);
        if x.hypot(y) < keep_out + r || (size - x).hypot(size - y) < keep_out + r {
            continue;
        }
        if placed.iter().any(|&(px, py, pr)| (px - x).hypot(py - y) < r + pr + gap) {
            continue;
        }
        if disc_cells(x, y, r + gap).any(|c| !map.in_bounds(c) || !map.is_free(c)) {
            continue;
        }
        let cells: Vec<Cell> = disc_cells(x, y, r).collect();
        for c in cells {
            map.set_prob(c, 1.0);
        }
        placed.push((x, y, r));
        out.push(Disc {
            center: Vec2::new(x * res, y * res),
            radius: r * res,
        });
    }
}

/// Cells whose centers lie within `r` of `(x, y)`, all in cell units.
fn disc_cells(x: f64, y: f64, r: f64) -> impl Iterator<Item = Cell> {
    let (x0, x1) = ((x - r).floor() as i32 - 1, (x + r).ceil() as i32 + 1);
    let (y0, y1) = ((y - r).floor() as i32 - 1, (y + r).ceil() as i32 + 1);
    (y0..=y1)
        .flat_map(move |cy| (x0..=x1).map(move |cx| Cell::new(cx, cy)))
        .filter(move |c| {
            let dx = c.x as f64 + 0.5 - x;
            let dy = c.y as f64 + 0.5 - y;
            dx * dx + dy * dy <= r * r
        })
}

/// Free cell nearest `target` (within a third of the map) whose clearance
/// disc is entirely free and on the map.
fn place_endpoint(map: &StaticMap, target: Cell, params: &MapGenParams) -> Option<Cell> {
    let c = params.endpoint_clearance_cells as i32;
    let window = (map.width() / 3) as i32;
    let mut best: Option<(i64, Cell)> = None;
    for dy in -window..=window {
        for dx in -window..=window {
            let cell = Cell::new(target.x + dx, target.y + dy);
            let d2 = cell.dist2(target);
            if best.is_some_and(|(b, _)| d2 >= b) {
                continue;
            }
            let clear = (-c..=c).all(|oy| {
                (-c..=c).all(|ox| {
                    let n = Cell::new(cell.x + ox, cell.y + oy);
                    ox * ox + oy * oy > c * c || (map.in_bounds(n) && map.is_free(n))
                })
            });
            if clear {
                best = Some((d2, cell));
            }
        }
    }
    best.map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        for family in MapFamily::ALL {
            let a = gen_map(family, 100, 1).unwrap();
            let b = gen_map(family, 100, 1).unwrap();
            assert_eq!(a.map, b.map);
            assert_eq!(a.start, b.start);
            assert_eq!(a.goal, b.goal);
        }
        let c = gen_map(MapFamily::Discs, 100, 2).unwrap();
        assert_ne!(gen_map(MapFamily::Discs, 100, 1).unwrap().map, c.map);
    }

    #[test]
    fn discs_never_overlap() {
        for seed in 0..10 {
            let g = gen_map(MapFamily::Discs, 100, seed).unwrap();
            assert!(g.discs.len() >= 10, "seed {seed}: {} discs", g.discs.len());
            for (i, a) in g.discs.iter().enumerate() {
                for b in &g.discs[i + 1..] {
                    assert!((a.center - b.center).norm() >= a.radius + b.radius);
                }
            }
        }
    }

    #[test]
    fn endpoints_sit_in_opposite_free_corners() {
        for family in MapFamily::ALL {
            let g = gen_map(family, 100, 3).unwrap();
            let ext = g.map.extent();
            assert!(g.start.x < ext.x / 3.0 && g.start.y < ext.y / 3.0);
            assert!(g.goal.x > 2.0 * ext.x / 3.0 && g.goal.y > 2.0 * ext.y / 3.0);
            assert!(g.map.is_free(g.map.cell_of(g.start.position()).unwrap()));
            assert!(g.map.is_free(g.map.cell_of(g.goal).unwrap()));
        }
    }

    #[test]
    fn blocks_form_a_grid() {
        let g = gen_map(MapFamily::Blocks, 100, 1).unwrap();
        assert_eq!(g.blocks.len(), 16);
        assert!(g.discs.is_empty());
        let m = gen_map(MapFamily::Mixed, 100, 1).unwrap();
        assert_eq!(m.blocks.len(), 9);
        assert!(!m.discs.is_empty());
    }

    #[test]
    fn infeasible_layouts_fail() {
        let params = MapGenParams {
            block_frac: 1.0,
            blocks_pitch_frac: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            gen_map_with(MapFamily::Blocks, 20, 1, &params),
            Err(BenchError::Generation(_))
        ));
        assert!(matches!(gen_map(MapFamily::Blocks, 19, 1), Err(BenchError::Generation(_))));
    }
}
