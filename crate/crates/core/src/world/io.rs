//! On-disk formats: ASCII maps, trajectory CSV and the JSON scenario
//! descriptor that ties them together.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DynamicObstacle, ObstacleSample, Scenario, StaticMap, Vec2, WorldError};
use crate::kinematics::State;

/// Parse an ASCII map: a `W H RESOLUTION` header followed by `H` rows of
/// `W` characters, `#` occupied and `.` free. Row 0 is the first line.
pub fn parse_map(text: &str, context: &str) -> Result<StaticMap, WorldError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| WorldError::parse(context, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(WorldError::parse(context, "header must be `W H RESOLUTION`"));
    }
    let width: usize = fields[0]
        .parse()
        .map_err(|_| WorldError::parse(context, format!("bad width {:?}", fields[0])))?;
    let height: usize = fields[1]
        .parse()
        .map_err(|_| WorldError::parse(context, format!("bad height {:?}", fields[1])))?;
    let resolution: f64 = fields[2]
        .parse()
        .map_err(|_| WorldError::parse(context, format!("bad resolution {:?}", fields[2])))?;
    let mut occupied = Vec::with_capacity(width * height);
    let mut rows = 0;
    for (row, line) in lines.enumerate() {
        let line = line.trim_end();
        if line.chars().count() != width {
            return Err(WorldError::parse(
                context,
                format!("row {row} has {} cells, expected {width}", line.chars().count()),
            ));
        }
        for ch in line.chars() {
            occupied.push(match ch {
                '#' => true,
                '.' => false,
                other => {
                    return Err(WorldError::parse(context, format!("unexpected character {other:?} in row {row}")))
                }
            });
        }
        rows += 1;
    }
    if rows != height {
        return Err(WorldError::parse(context, format!("expected {height} rows, found {rows}")));
    }
    StaticMap::from_occupancy(width, height, resolution, &occupied)
}

pub fn load_map(path: &Path) -> Result<StaticMap, WorldError> {
    let text = fs::read_to_string(path)?;
    parse_map(&text, &path.display().to_string())
}

pub fn format_map(map: &StaticMap) -> String {
    let mut out = format!("{} {} {}\n", map.width(), map.height(), map.resolution());
    for row in map.binary_grid().chunks(map.width()) {
        out.extend(row.iter().map(|&b| if b == 1 { '#' } else { '.' }));
        out.push('\n');
    }
    out
}

pub fn write_map(map: &StaticMap, path: &Path) -> Result<(), WorldError> {
    fs::write(path, format_map(map))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    obstacle_id: String,
    t: f64,
    x: f64,
    y: f64,
    radius: f64,
}

/// Read `obstacle_id,t,x,y,radius` rows. Obstacles appear in order of first
/// occurrence; within an obstacle, timestamps must strictly increase.
pub fn parse_trajectories<R: std::io::Read>(reader: R, context: &str) -> Result<Vec<DynamicObstacle>, WorldError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| WorldError::parse(context, e.to_string()))?
        .clone();
    let expected = ["obstacle_id", "t", "x", "y", "radius"];
    if headers.iter().ne(expected.iter().copied()) {
        return Err(WorldError::parse(context, format!("header must be `{}`", expected.join(","))));
    }
    let mut groups: Vec<(String, f64, Vec<ObstacleSample>)> = Vec::new();
    for (line, row) in rdr.deserialize::<TrajectoryRow>().enumerate() {
        let row = row.map_err(|e| WorldError::parse(context, format!("row {}: {e}", line + 1)))?;
        let sample = ObstacleSample {
            t: row.t,
            position: Vec2::new(row.x, row.y),
        };
        match groups.iter_mut().find(|g| g.0 == row.obstacle_id) {
            Some(g) => {
                if g.1 != row.radius {
                    return Err(WorldError::Validation(format!(
                        "obstacle {}: radius changes between rows",
                        row.obstacle_id
                    )));
                }
                g.2.push(sample);
            }
            None => groups.push((row.obstacle_id, row.radius, vec![sample])),
        }
    }
    groups
        .into_iter()
        .map(|(id, radius, samples)| DynamicObstacle::new(id, radius, samples))
        .collect()
}

pub fn load_trajectories(path: &Path) -> Result<Vec<DynamicObstacle>, WorldError> {
    let file = fs::File::open(path)?;
    parse_trajectories(file, &path.display().to_string())
}

pub fn write_trajectories(obstacles: &[DynamicObstacle], path: &Path) -> Result<(), WorldError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| WorldError::parse(path.display().to_string(), e.to_string()))?;
    for ob in obstacles {
        for s in ob.samples() {
            w.serialize(TrajectoryRow {
                obstacle_id: ob.id.clone(),
                t: s.t,
                x: s.position.x,
                y: s.position.y,
                radius: ob.radius,
            })
            .map_err(|e| WorldError::parse(path.display().to_string(), e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// JSON scenario descriptor. `map` and `trajectories` are paths relative to
/// the descriptor's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDescriptor {
    pub map: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<PathBuf>,
    pub start: [f64; 3],
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub dt: f64,
    pub horizon_depth: usize,
}

impl ScenarioDescriptor {
    pub fn resolve(&self, base: &Path) -> Result<Scenario, WorldError> {
        let map = load_map(&base.join(&self.map))?;
        let obstacles = match &self.trajectories {
            Some(p) => load_trajectories(&base.join(p))?,
            None => Vec::new(),
        };
        let scenario = Scenario {
            map,
            obstacles,
            start: State::new(self.start[0], self.start[1], self.start[2]),
            goal: Vec2::new(self.goal[0], self.goal[1]),
            goal_radius: self.goal_radius,
            dt: self.dt,
            horizon_depth: self.horizon_depth,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn write(&self, path: &Path) -> Result<(), WorldError> {
        let mut f = fs::File::create(path)?;
        let text = serde_json::to_string_pretty(self).expect("descriptor serializes");
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, WorldError> {
    let text = fs::read_to_string(path)?;
    let desc: ScenarioDescriptor =
        serde_json::from_str(&text).map_err(|e| WorldError::parse(path.display().to_string(), e.to_string()))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    desc.resolve(base)
}
