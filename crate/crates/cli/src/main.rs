use std::fs;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use namr_core::bench::{gen_dynamics, gen_map, run_suite, BenchSuite, DynamicsParams, DynamicsProfile, MapFamily};
use namr_core::heuristic::{serve, OracleCorridor};
use namr_core::planner::{Planner, PlannerConfig, Variant};
use namr_core::world::{load_scenario, write_map, write_trajectories, ScenarioDescriptor};

#[derive(Parser)]
#[command(name = "namr", version, about = "Risk-aware multi-tree planning among moving obstacles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one scenario and write the outcome as JSON.
    Plan {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        seed: Option<u64>,
        /// Planner configuration (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the final root tree and subtrees as CSV into this directory.
        #[arg(long)]
        dump_trees: Option<PathBuf>,
        /// Outcome file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a benchmark suite and write runs.csv and summary.json.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        /// Simulated seconds per run.
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a map and write a scenario descriptor next to it.
    Genmap {
        #[arg(long)]
        family: MapFamily,
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scenario descriptor path; the map (and tracks) share its stem.
        #[arg(long)]
        out: PathBuf,
        /// Moving obstacles to generate.
        #[arg(long, default_value_t = 0)]
        movers: usize,
        #[arg(long, default_value = "linear-pingpong")]
        profile: DynamicsProfile,
        #[arg(long, default_value_t = 0.5)]
        dt: f64,
        #[arg(long, default_value_t = 0.5)]
        goal_radius: f64,
        #[arg(long, default_value_t = 6)]
        horizon_depth: usize,
    },
    /// Answer region requests with the built-in corridor generator, on stdio
    /// or on a TCP address.
    ServeOracle {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long, default_value_t = 3)]
        clearance_cells: u32,
        #[arg(long, default_value_t = 10)]
        corridor_radius_cells: u32,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Plan {
            scenario,
            variant,
            seed,
            config,
            dump_trees,
            out,
        } => cmd_plan(&scenario, variant, seed, config.as_deref(), dump_trees.as_deref(), out.as_deref()),
        Command::Bench {
            suite,
            runs,
            timeout,
            parallel,
            out,
        } => cmd_bench(&suite, runs, timeout, parallel, &out),
        Command::Genmap {
            family,
            size,
            seed,
            out,
            movers,
            profile,
            dt,
            goal_radius,
            horizon_depth,
        } => {
            let desc = Descriptor {
                dt,
                goal_radius,
                horizon_depth,
            };
            cmd_genmap(family, size, seed, &out, movers, &profile, desc)
        }
        Command::ServeOracle {
            listen,
            clearance_cells,
            corridor_radius_cells,
        } => {
            let mut oracle = OracleCorridor {
                clearance_cells,
                corridor_radius_cells,
            };
            match listen {
                None => serve(io::stdin().lock(), io::stdout().lock(), &mut oracle).context("serving stdio"),
                Some(addr) => {
                    let listener = TcpListener::bind(&addr).with_context(|| format!("binding {addr}"))?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    for stream in listener.incoming() {
                        let stream = stream?;
                        let reader = BufReader::new(stream.try_clone()?);
                        if let Err(e) = serve(reader, stream, &mut oracle) {
                            log::warn!("connection ended: {e}");
                        }
                    }
                    Ok(())
                }
            }
        }
    }
}

fn cmd_plan(
    scenario_path: &Path,
    variant: Option<Variant>,
    seed: Option<u64>,
    config: Option<&Path>,
    dump_trees: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let scenario = load_scenario(scenario_path).with_context(|| format!("loading {}", scenario_path.display()))?;
    let mut cfg: PlannerConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PlannerConfig::default(),
    };
    if let Some(v) = variant {
        cfg.variant = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let generator = cfg.sampler.connect_generator();
    let mut planner = Planner::new(&scenario, &cfg, generator)?;
    let outcome = planner.run();
    if let Some(dir) = dump_trees {
        planner.dump_trees(dir).with_context(|| format!("writing trees to {}", dir.display()))?;
    }
    eprintln!(
        "{} seed {}: {:?} after {:.1} s, {:.2} m, {} cycles",
        outcome.variant, outcome.seed, outcome.termination, outcome.execution_time, outcome.trajectory_length, outcome.cycles
    );
    let json = outcome.to_json() + "\n";
    match out {
        Some(p) => fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

fn cmd_bench(suite_path: &Path, runs: Option<usize>, timeout: Option<f64>, parallel: usize, out: &Path) -> Result<()> {
    let mut suite = BenchSuite::load(suite_path).with_context(|| format!("loading {}", suite_path.display()))?;
    if let Some(r) = runs {
        suite.runs = r;
    }
    if let Some(t) = timeout {
        suite.timeout = t;
    }
    let base = suite_path.parent().unwrap_or_else(|| Path::new("."));
    let report = run_suite(&suite, base, parallel)?;
    report.write(out)?;
    let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.2}"));
    for c in &report.cells {
        eprintln!(
            "{:<16} {:<5} success {:>3}/{:<3} time {:>7} +- {:<7} length {:>7} +- {}",
            c.scenario,
            c.variant.name(),
            c.successes,
            c.runs,
            na(c.exec_time_mean),
            na(c.exec_time_std),
            na(c.traj_len_mean),
            na(c.traj_len_std)
        );
    }
    Ok(())
}

struct Descriptor {
    dt: f64,
    goal_radius: f64,
    horizon_depth: usize,
}

fn cmd_genmap(
    family: MapFamily,
    size: usize,
    seed: u64,
    out: &Path,
    movers: usize,
    profile: &DynamicsProfile,
    desc: Descriptor,
) -> Result<()> {
    if matches!(profile, DynamicsProfile::Csv(_)) {
        bail!("genmap generates synthetic movers only; reference a CSV from the descriptor instead");
    }
    let generated = gen_map(family, size, seed)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| Path::new("."));
    let stem = out
        .file_stem()
        .context("--out needs a file name")?
        .to_string_lossy()
        .into_owned();
    let map_name = PathBuf::from(format!("{stem}.map"));
    write_map(&generated.map, &dir.join(&map_name))?;
    let trajectories = if movers > 0 {
        let params = DynamicsParams {
            dt: desc.dt,
            ..DynamicsParams::default()
        };
        let avoid = [generated.start.position(), generated.goal];
        let obstacles = gen_dynamics(profile, &generated.map, &avoid, movers, seed, &params)?;
        let name = PathBuf::from(format!("{stem}_tracks.csv"));
        write_trajectories(&obstacles, &dir.join(&name))?;
        Some(name)
    } else {
        None
    };
    let s = generated.start;
    ScenarioDescriptor {
        map: map_name,
        trajectories,
        start: [s.x, s.y, s.theta],
        goal: [generated.goal.x, generated.goal.y],
        goal_radius: desc.goal_radius,
        dt: desc.dt,
        horizon_depth: desc.horizon_depth,
    }
    .write(out)?;
    eprintln!(
        "{family} size {size} seed {seed}: {} blocks, {} discs, {movers} movers",
        generated.blocks.len(),
        generated.discs.len()
    );
    Ok(())
}
