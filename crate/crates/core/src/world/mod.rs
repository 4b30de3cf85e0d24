//! Environment model: static occupancy, moving obstacles with observation
//! playback, and the probabilistic collision risk used to gate tree growth.

mod io;
mod obstacle;
mod risk;

pub use io::{load_map, load_scenario, load_trajectories, write_map, write_trajectories, ScenarioDescriptor};
pub use obstacle::{DynamicObstacle, ObstacleSample};
pub use risk::{
    collision_prob, combine_risk, moving_collision_prob, obstacle_risk, segment_static_free,
    static_collision_prob, RiskModel, WorldSnapshot,
};

use crate::kinematics::State;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Planar vector in meters.
pub type Vec2 = nalgebra::Vector2<f64>;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("obstacle {0} has no observation at or before t = {1}")]
    NoObservation(String, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WorldError {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        WorldError::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

/// Integer grid coordinate. `y` indexes rows; row 0 is the first row of a map file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    /// 4-connected neighbours in a fixed order (+x, -x, +y, -y).
    pub fn neighbors4(self) -> [Cell; 4] {
        [
            Cell::new(self.x + 1, self.y),
            Cell::new(self.x - 1, self.y),
            Cell::new(self.x, self.y + 1),
            Cell::new(self.x, self.y - 1),
        ]
    }

    pub fn dist2(self, other: Cell) -> i64 {
        let dx = (self.x - other.x) as i64;
        let dy = (self.y - other.y) as i64;
        dx * dx + dy * dy
    }
}

/// Static occupancy grid holding a per-cell collision probability.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticMap {
    width: usize,
    height: usize,
    resolution: f64,
    cells: Vec<f64>,
}

impl StaticMap {
    /// An all-free map.
    pub fn empty(width: usize, height: usize, resolution: f64) -> Result<Self, WorldError> {
        Self::from_probabilities(width, height, resolution, vec![0.0; width * height])
    }

    pub fn from_probabilities(
        width: usize,
        height: usize,
        resolution: f64,
        cells: Vec<f64>,
    ) -> Result<Self, WorldError> {
        if width == 0 || height == 0 {
            return Err(WorldError::Validation("map dimensions must be at least 1x1".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(WorldError::Validation(format!("resolution must be > 0, got {resolution}")));
        }
        if cells.len() != width * height {
            return Err(WorldError::Validation(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        if let Some(bad) = cells.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(WorldError::Validation(format!("cell probability {bad} outside [0, 1]")));
        }
        Ok(StaticMap {
            width,
            height,
            resolution,
            cells,
        })
    }

    /// Binary map from a row-major occupancy mask.
    pub fn from_occupancy(
        width: usize,
        height: usize,
        resolution: f64,
        occupied: &[bool],
    ) -> Result<Self, WorldError> {
        let cells = occupied.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect();
        Self::from_probabilities(width, height, resolution, cells)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    /// Extent of the map in meters.
    pub fn extent(&self) -> Vec2 {
        Vec2::new(
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        )
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn index(&self, c: Cell) -> usize {
        debug_assert!(self.in_bounds(c));
        c.y as usize * self.width + c.x as usize
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Occupancy probability of a cell; off-map cells count as occupied.
    pub fn prob(&self, c: Cell) -> f64 {
        if self.in_bounds(c) {
            self.cells[self.index(c)]
        } else {
            1.0
        }
    }

    pub fn set_prob(&mut self, c: Cell, p: f64) {
        assert!((0.0..=1.0).contains(&p));
        let i = self.index(c);
        self.cells[i] = p;
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.cells[self.index(c)] < 0.5
    }

    /// Cell containing a position, if on the map.
    pub fn cell_of(&self, p: Vec2) -> Option<Cell> {
        if !(p.x.is_finite() && p.y.is_finite()) || p.x < 0.0 || p.y < 0.0 {
            return None;
        }
        let c = Cell::new(
            (p.x / self.resolution).floor() as i32,
            (p.y / self.resolution).floor() as i32,
        );
        self.in_bounds(c).then_some(c)
    }

    /// Cell containing `p`, clamped onto the grid.
    pub fn clamp_cell(&self, p: Vec2) -> Cell {
        let cx = (p.x / self.resolution).floor().clamp(0.0, (self.width - 1) as f64);
        let cy = (p.y / self.resolution).floor().clamp(0.0, (self.height - 1) as f64);
        Cell::new(cx as i32, cy as i32)
    }

    pub fn cell_center(&self, c: Cell) -> Vec2 {
        Vec2::new(
            (c.x as f64 + 0.5) * self.resolution,
            (c.y as f64 + 0.5) * self.resolution,
        )
    }

    /// Row-major binary grid, 1 = occupied.
    pub fn binary_grid(&self) -> Vec<u8> {
        self.cells.iter().map(|&p| u8::from(p >= 0.5)).collect()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.cells
    }
}

/// A planning problem: map, moving obstacles, endpoints and timing constants.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub map: StaticMap,
    pub obstacles: Vec<DynamicObstacle>,
    pub start: State,
    pub goal: Vec2,
    pub goal_radius: f64,
    pub dt: f64,
    pub horizon_depth: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.goal_radius > 0.0) {
            return Err(WorldError::Validation("goal_radius must be > 0".into()));
        }
        if !(self.dt > 0.0) {
            return Err(WorldError::Validation("dt must be > 0".into()));
        }
        match self.map.cell_of(self.start.position()) {
            Some(c) if self.map.is_free(c) => {}
            _ => return Err(WorldError::Validation("start does not lie in a free cell".into())),
        }
        match self.map.cell_of(self.goal) {
            Some(c) if self.map.is_free(c) => {}
            _ => return Err(WorldError::Validation("goal does not lie in a free cell".into())),
        }
        for ob in &self.obstacles {
            ob.validate()?;
        }
        Ok(())
    }

    pub fn start_cell(&self) -> Cell {
        self.map.clamp_cell(self.start.position())
    }

    pub fn goal_cell(&self) -> Cell {
        self.map.clamp_cell(self.goal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_maps() {
        assert!(StaticMap::empty(0, 3, 0.1).is_err());
        assert!(StaticMap::empty(3, 3, 0.0).is_err());
        assert!(StaticMap::from_probabilities(1, 1, 1.0, vec![1.5]).is_err());
    }

    #[test]
    fn cell_lookup() {
        let m = StaticMap::empty(10, 5, 0.5).unwrap();
        assert_eq!(m.cell_of(Vec2::new(0.74, 2.49)), Some(Cell::new(1, 4)));
        assert_eq!(m.cell_of(Vec2::new(5.0, 1.0)), None);
        assert_eq!(m.cell_of(Vec2::new(-0.01, 1.0)), None);
        assert_eq!(m.clamp_cell(Vec2::new(9.0, -3.0)), Cell::new(9, 0));
        let c = Cell::new(3, 2);
        assert_eq!(m.cell_at(m.index(c)), c);
        assert_eq!(m.prob(Cell::new(-1, 0)), 1.0);
    }
}
