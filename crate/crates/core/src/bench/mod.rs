//! Batch runs over generated or file-based scenarios, with per-run rows and
//! per-(scenario, variant) aggregates.

pub mod dynamics;
pub mod mapgen;
pub mod stats;

pub use dynamics::{circular_position, gen_dynamics, pingpong_position, DynamicsParams, DynamicsProfile};
pub use mapgen::{gen_map, gen_map_with, Block, Disc, GeneratedMap, MapFamily, MapGenParams};
pub use stats::{mean, rank_sum, sample_stddev, RankSum};

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{plan, PlannerConfig, Variant};
use crate::world::{load_scenario, Scenario, WorldError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("invalid suite: {0}")]
    Suite(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn default_size() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub family: MapFamily,
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: MapGenParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub profile: DynamicsProfile,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub params: DynamicsParams,
}

/// One benchmark scenario: either a generated map (`map`) or a scenario
/// descriptor on disk (`file`), optionally with generated movers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<DynamicsSpec>,
    /// Timing for generated maps.
    #[serde(default = "ScenarioSpec::default_goal_radius")]
    pub goal_radius: f64,
    #[serde(default = "ScenarioSpec::default_dt")]
    pub dt: f64,
    #[serde(default = "ScenarioSpec::default_horizon_depth")]
    pub horizon_depth: usize,
}

impl ScenarioSpec {
    fn default_goal_radius() -> f64 {
        0.5
    }

    fn default_dt() -> f64 {
        0.5
    }

    fn default_horizon_depth() -> usize {
        6
    }

    pub fn generated(name: impl Into<String>, family: MapFamily, size: usize, map_seed: u64) -> Self {
        ScenarioSpec {
            name: name.into(),
            map: Some(MapSpec {
                family,
                size,
                seed: map_seed,
                params: MapGenParams::default(),
            }),
            file: None,
            dynamics: None,
            goal_radius: Self::default_goal_radius(),
            dt: Self::default_dt(),
            horizon_depth: Self::default_horizon_depth(),
        }
    }

    pub fn with_movers(mut self, profile: DynamicsProfile, count: usize, seed: u64) -> Self {
        self.dynamics = Some(DynamicsSpec {
            profile,
            count,
            seed,
            params: DynamicsParams::default(),
        });
        self
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    fn validate(&self, base: &Path) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Suite(format!("scenario {:?}: {m}", self.name)));
        match (&self.map, &self.file) {
            (Some(_), Some(_)) | (None, None) => return bad("exactly one of `map` and `file` is required".into()),
            (None, Some(f)) if !Self::resolve(base, f).is_file() => return bad(format!("{} does not exist", f.display())),
            _ => {}
        }
        if let Some(DynamicsSpec {
            profile: DynamicsProfile::Csv(p),
            ..
        }) = &self.dynamics
        {
            if !Self::resolve(base, p).is_file() {
                return bad(format!("{} does not exist", p.display()));
            }
        }
        Ok(())
    }

    /// Materialize the scenario. Movers are generated long enough to cover
    /// `timeout` plus the prediction horizon.
    pub fn build(&self, base: &Path, timeout: f64) -> Result<Scenario, BenchError> {
        self.validate(base)?;
        let mut scenario = match (&self.map, &self.file) {
            (Some(m), None) => gen_map_with(m.family, m.size, m.seed, &m.params)?.into_scenario(
                Vec::new(),
                self.goal_radius,
                self.dt,
                self.horizon_depth,
            ),
            (None, Some(f)) => load_scenario(&Self::resolve(base, f))?,
            _ => unreachable!("validated"),
        };
        if let Some(d) = &self.dynamics {
            let mut params = d.params.clone();
            params.dt = scenario.dt;
            params.duration = params.duration.max(timeout + (scenario.horizon_depth + 1) as f64 * scenario.dt);
            let profile = match &d.profile {
                DynamicsProfile::Csv(p) => DynamicsProfile::Csv(Self::resolve(base, p)),
                other => other.clone(),
            };
            let avoid = [scenario.start.position(), scenario.goal];
            scenario.obstacles = gen_dynamics(&profile, &scenario.map, &avoid, d.count, d.seed, &params)?;
        }
        scenario.validate()?;
        Ok(scenario)
    }
}

fn default_variants() -> Vec<Variant> {
    Variant::ALL.to_vec()
}

fn default_runs() -> usize {
    50
}

fn default_timeout() -> f64 {
    240.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSuite {
    pub scenarios: Vec<ScenarioSpec>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Simulated seconds per run.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    /// Run `i` uses seed `base_seed + i`.
    #[serde(default)]
    pub base_seed: u64,
    /// Planner settings shared by every run; variant, seed and timeout are
    /// set per run.
    #[serde(default)]
    pub config: PlannerConfig,
}

impl BenchSuite {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self, base: &Path) -> Result<(), BenchError> {
        if self.runs == 0 {
            return Err(BenchError::Suite("runs must be >= 1".into()));
        }
        if self.scenarios.is_empty() || self.variants.is_empty() {
            return Err(BenchError::Suite("at least one scenario and one variant are required".into()));
        }
        if !(self.timeout > 0.0) {
            return Err(BenchError::Suite("timeout must be > 0".into()));
        }
        for s in &self.scenarios {
            s.validate(base)?;
        }
        let mut cfg = self.config.clone();
        cfg.timeout = self.timeout;
        cfg.validate().map_err(BenchError::Suite)
    }
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub success: bool,
    pub exec_time_s: Option<f64>,
    pub traj_len_m: Option<f64>,
    pub cycles: u64,
    pub nodes: usize,
    pub region_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureNote {
    pub scenario: String,
    pub variant: Variant,
    pub seed: u64,
    pub reason: String,
}

mod na {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("NA"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Field {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Field::deserialize(d)? {
            Field::Num(x) => Ok(Some(x)),
            Field::Text(t) if t == "NA" => Ok(None),
            Field::Text(t) => Err(serde::de::Error::custom(format!("expected a number or NA, got {t:?}"))),
        }
    }
}

/// Aggregates for one (scenario, variant) cell. Time and length statistics
/// cover successful runs only; `None` is rendered as `NA`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scenario: String,
    pub variant: Variant,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    #[serde(with = "na")]
    pub exec_time_mean: Option<f64>,
    #[serde(with = "na")]
    pub exec_time_std: Option<f64>,
    #[serde(with = "na")]
    pub traj_len_mean: Option<f64>,
    #[serde(with = "na")]
    pub traj_len_std: Option<f64>,
}

pub const FAILURE_NOTE: &str = "Execution time and trajectory length statistics are computed over successful runs only. \
Failed runs are excluded, so the true means and spreads are likely higher than reported.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: usize,
    pub timeout: f64,
    pub base_seed: u64,
    pub cells: Vec<CellSummary>,
    pub failures: Vec<FailureNote>,
    pub note: String,
    #[serde(skip)]
    pub rows: Vec<RunRow>,
}

/// Per-cell aggregates over `rows`, in order of first appearance.
pub fn aggregate(rows: &[RunRow]) -> Vec<CellSummary> {
    let mut keys: Vec<(&str, Variant)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.scenario.as_str(), r.variant)) {
            keys.push((&r.scenario, r.variant));
        }
    }
    keys.into_iter()
        .map(|(scenario, variant)| {
            let cell: Vec<&RunRow> = rows.iter().filter(|r| r.scenario == scenario && r.variant == variant).collect();
            let ok: Vec<&&RunRow> = cell.iter().filter(|r| r.success).collect();
            let times: Vec<f64> = ok.iter().filter_map(|r| r.exec_time_s).collect();
            let lens: Vec<f64> = ok.iter().filter_map(|r| r.traj_len_m).collect();
            CellSummary {
                scenario: scenario.to_string(),
                variant,
                runs: cell.len(),
                successes: ok.len(),
                success_rate: ok.len() as f64 / cell.len() as f64,
                exec_time_mean: mean(&times),
                exec_time_std: sample_stddev(&times),
                traj_len_mean: mean(&lens),
                traj_len_std: sample_stddev(&lens),
            }
        })
        .collect()
}

/// Run every (scenario, variant, run) cell on `parallel` threads. Results do
/// not depend on the thread count.
pub fn run_suite(suite: &BenchSuite, base: &Path, parallel: usize) -> Result<BenchReport, BenchError> {
    suite.validate(base)?;
    let scenarios: Vec<(String, Scenario)> = suite
        .scenarios
        .iter()
        .map(|s| Ok((s.name.clone(), s.build(base, suite.timeout)?)))
        .collect::<Result<_, BenchError>>()?;
    let mut jobs = Vec::new();
    for (si, _) in scenarios.iter().enumerate() {
        for &v in &suite.variants {
            for i in 0..suite.runs {
                jobs.push((si, v, suite.base_seed + i as u64));
            }
        }
    }
    let run = |&(si, variant, seed): &(usize, Variant, u64)| {
        let (name, scenario) = &scenarios[si];
        let mut cfg = suite.config.clone();
        cfg.variant = variant;
        cfg.seed = seed;
        cfg.timeout = suite.timeout;
        let result = plan(scenario, &cfg);
        log::debug!("{name} {variant} seed {seed}: {}", result.as_ref().map_or("error", |o| if o.success { "ok" } else { "failed" }));
        match result {
            Ok(o) => {
                let reason = (!o.success).then(|| format!("{:?}", o.termination).to_lowercase());
                let row = RunRow {
                    scenario: name.clone(),
                    variant,
                    seed,
                    success: o.success,
                    exec_time_s: Some(o.execution_time),
                    traj_len_m: Some(o.trajectory_length),
                    cycles: o.cycles,
                    nodes: o.stats.nodes_created,
                    region_updates: o.stats.region_updates,
                };
                (row, reason)
            }
            Err(e) => (
                RunRow {
                    scenario: name.clone(),
                    variant,
                    seed,
                    success: false,
                    exec_time_s: None,
                    traj_len_m: None,
                    cycles: 0,
                    nodes: 0,
                    region_updates: 0,
                },
                Some(e.to_string()),
            ),
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| BenchError::Suite(e.to_string()))?;
    let results: Vec<(RunRow, Option<String>)> = pool.install(|| jobs.par_iter().map(run).collect());
    let failures = results
        .iter()
        .filter_map(|(r, reason)| {
            reason.as_ref().map(|reason| FailureNote {
                scenario: r.scenario.clone(),
                variant: r.variant,
                seed: r.seed,
                reason: reason.clone(),
            })
        })
        .collect();
    let rows: Vec<RunRow> = results.into_iter().map(|(r, _)| r).collect();
    Ok(BenchReport {
        runs: suite.runs,
        timeout: suite.timeout,
        base_seed: suite.base_seed,
        cells: aggregate(&rows),
        failures,
        note: FAILURE_NOTE.to_string(),
        rows,
    })
}

impl BenchReport {
    pub fn runs_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Write `runs.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("runs.csv"), self.runs_csv()?)?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRow>, BenchError> {
    let mut rdr = csv::Reader::from_path(path)?;
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}
