use std::fs;
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::thread;
use std::time::Duration;

use namr_core::bench::{gen_map, MapFamily};
use namr_core::heuristic::{ExternalModel, OracleCorridor, RegionGenerator, Transport};
use namr_core::world::load_scenario;

const BIN: &str = env!("CARGO_BIN_EXE_namr");

fn namr(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(BIN).args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "namr {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn genmap_writes_a_loadable_scenario() {
    let dir = tempfile::tempdir().unwrap();
    namr(
        dir.path(),
        &["genmap", "--family", "mixed", "--size", "100", "--seed", "4", "--movers", "2", "--out", "mixed.json"],
    );
    let scenario = load_scenario(&dir.path().join("mixed.json")).unwrap();
    let direct = gen_map(MapFamily::Mixed, 100, 4).unwrap();
    assert_eq!(scenario.map, direct.map);
    assert_eq!(scenario.start, direct.start);
    assert_eq!(scenario.goal, direct.goal);
    assert_eq!(scenario.obstacles.len(), 2);
    assert!(dir.path().join("mixed.map").is_file());
    assert!(dir.path().join("mixed_tracks.csv").is_file());
}

#[test]
fn plan_is_reproducible_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    namr(dir.path(), &["genmap", "--family", "discs", "--size", "40", "--seed", "2", "--out", "s.json"]);
    fs::write(dir.path().join("cfg.json"), r#"{"variant": "RISK", "seed": 99, "timeout": 120}"#).unwrap();
    let run = |out: &str| {
        namr(
            dir.path(),
            &["plan", "--scenario", "s.json", "--config", "cfg.json", "--variant", "multi", "--seed", "5", "--dump-trees", "trees", "--out", out],
        );
        fs::read_to_string(dir.path().join(out)).unwrap()
    };
    let a = run("a.json");
    let b = run("b.json");
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["variant"], "MULTI");
    assert_eq!(v["seed"], 5);
    assert_eq!(v["success"], true);
    let root = fs::read_to_string(dir.path().join("trees/root_tree.csv")).unwrap();
    assert!(root.starts_with("id,parent,x,y,theta,t,N,risk\n"));
    assert!(dir.path().join("trees/subtrees.csv").is_file());
}

#[test]
fn plan_rejects_unknown_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    namr(dir.path(), &["genmap", "--family", "blocks", "--size", "40", "--out", "s.json"]);
    fs::write(dir.path().join("cfg.json"), r#"{"cycle_budgett": 5}"#).unwrap();
    let out = Command::new(BIN)
        .args(["plan", "--scenario", "s.json", "--config", "cfg.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cycle_budgett"));
}

#[test]
fn bench_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("suite.json"),
        r#"{"scenarios": [{"name": "d", "map": {"family": "discs", "size": 40, "seed": 1}}], "variants": ["RISK", "BI"], "runs": 5}"#,
    )
    .unwrap();
    namr(dir.path(), &["bench", "--suite", "suite.json", "--runs", "2", "--timeout", "0.1", "--parallel", "2", "--out", "rep"]);
    let csv = fs::read_to_string(dir.path().join("rep/runs.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("scenario,variant,seed,success,exec_time_s,traj_len_m,cycles,nodes,region_updates")
    );
    assert_eq!(lines.count(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rep/summary.json")).unwrap()).unwrap();
    let cells = summary["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    for c in cells {
        assert_eq!(c["success_rate"], 0.0);
        assert_eq!(c["exec_time_mean"], "NA");
    }
}

#[test]
fn serve_oracle_over_stdio_matches_in_process_oracle() {
    let generated = gen_map(MapFamily::Blocks, 60, 3).unwrap();
    let (start, goal) = (generated.map.clamp_cell(generated.start.position()), generated.map.clamp_cell(generated.goal));
    let transport = Transport::Stdio {
        command: vec![BIN.into(), "serve-oracle".into()],
    };
    let mut remote = ExternalModel::connect(&transport, Duration::from_secs(30)).unwrap();
    let mut local = OracleCorridor::default();
    for _ in 0..3 {
        let got = remote.generate(&generated.map, start, goal).unwrap();
        assert_eq!(got, local.generate(&generated.map, start, goal).unwrap());
        assert!(!got.is_empty());
    }
}

#[test]
fn serve_oracle_over_tcp() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(BIN)
        .args(["serve-oracle", "--listen", &addr, "--corridor-radius-cells", "2"])
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut ready = false;
    for _ in 0..100 {
        if TcpStream::connect(&addr).is_ok() {
            ready = true;
            break;
        }
        thread::sleep(Duration::from_millis(50));
    }
    let result = ready.then(|| {
        let generated = gen_map(MapFamily::Discs, 50, 1).unwrap();
        let (start, goal) = (generated.map.clamp_cell(generated.start.position()), generated.map.clamp_cell(generated.goal));
        let mut remote = ExternalModel::connect(&Transport::Tcp { addr: addr.clone() }, Duration::from_secs(30)).unwrap();
        let mut local = OracleCorridor {
            corridor_radius_cells: 2,
            ..OracleCorridor::default()
        };
        (remote.generate(&generated.map, start, goal).unwrap(), local.generate(&generated.map, start, goal).unwrap())
    });
    child.kill().unwrap();
    child.wait().unwrap();
    let (remote, local) = result.expect("server did not start");
    assert_eq!(remote, local);
}
