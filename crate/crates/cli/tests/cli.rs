use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const DOUBLE_INTEGRATOR: &str = r#"{
  "system": {"A": {"constant": [[0.0, 1.0], [0.0, 0.0]]}, "B": {"constant": [[0.0], [1.0]]}},
  "marginals": {
    "mode": "gaussian",
    "initial": {"mean": [-5.0, -5.0], "cov": [[1.0, 0.0], [0.0, 1.0]]},
    "final": {"mean": [5.0, 5.0], "cov": [[1.0, 0.0], [0.0, 1.0]]}
  },
  "epsilon": [0.0],
  "out": "out"
}"#;

const GRID_A: &str = r#"{
  "system": {"A": {"constant": [[A]]}, "B": {"constant": [[1.0]]}},
  "marginals": {
    "mode": "grid1d",
    "initial": {"builtin": "paper62_rho0"},
    "final": {"builtin": "paper62_rho1"}
  },
  "epsilon": [0.1, 0.05, 0.02, 0.01],
  "grid": 128,
  "out": "out"
}"#;

fn ptrans(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ptrans"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

fn setup(contents: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("config.json");
    fs::write(&path, contents).unwrap();
    (dir, path)
}

fn grid_config(a: f64) -> String {
    GRID_A.replace("[[A]]", &format!("[[{a:?}]]"))
}

/// Parses a headed CSV into its header and numeric rows.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn column(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn gramian_of_double_integrator() {
    let (dir, cfg) = setup(DOUBLE_INTEGRATOR);
    let out = ptrans(&["gramian"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/gramian.csv"));
    let last = rows.last().unwrap();
    assert!((last[column(&header, "t")] - 1.0).abs() < 1e-12);
    let expected = [("m_11", 1.0 / 3.0), ("m_12", 0.5), ("m_21", 0.5), ("m_22", 1.0)];
    for (name, value) in expected {
        assert!((last[column(&header, name)] - value).abs() < 1e-6, "{name}");
    }
}

#[test]
fn uncontrollable_system_exits_with_config_error() {
    let cfg_text = DOUBLE_INTEGRATOR.replace(r#""B": {"constant": [[0.0], [1.0]]}"#, r#""B": {"constant": [[0.0], [0.0]]}"#);
    let (_dir, cfg) = setup(&cfg_text);
    let out = ptrans(&["gramian"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("NonControllable"));
}

#[test]
fn unknown_config_field_reports_location() {
    let cfg_text = DOUBLE_INTEGRATOR.replace(r#""out": "out""#, r#""outt": "out""#);
    let (_dir, cfg) = setup(&cfg_text);
    let out = ptrans(&["gramian"], &cfg);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("outt") && err.contains("line"), "{err}");
}

#[test]
fn zero_noise_bridge_hits_terminal_moments() {
    let (dir, cfg) = setup(DOUBLE_INTEGRATOR);
    let out = ptrans(&["gauss-bridge"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/flow_eps0.csv"));
    let last = rows.last().unwrap();
    for (name, value) in [("n_1", 5.0), ("n_2", 5.0), ("sigma_11", 1.0), ("sigma_12", 0.0), ("sigma_21", 0.0), ("sigma_22", 1.0)] {
        assert!((last[column(&header, name)] - value).abs() < 1e-5, "{name}");
    }
}

#[test]
fn sinkhorn_rejects_zero_epsilon() {
    let (_dir, cfg) = setup(&grid_config(-2.0));
    let out = ptrans(&["sinkhorn", "--epsilon", "0"], &cfg);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn grid_command_on_gaussian_config_is_config_error() {
    let (_dir, cfg) = setup(DOUBLE_INTEGRATOR);
    let out = ptrans(&["omt1d"], &cfg);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn omt1d_map_is_monotone() {
    let (dir, cfg) = setup(&grid_config(-2.0));
    let out = ptrans(&["omt1d"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/map.csv"));
    let t = column(&header, "T");
    assert!(rows.windows(2).all(|w| w[1][t] >= w[0][t]));
}

#[test]
fn free_particles_move_in_straight_lines() {
    let (dir, cfg) = setup(&grid_config(0.0));
    let out = ptrans(&["omt1d"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, map) = read_csv(&dir.path().join("out/map.csv"));
    let (header, rows) = read_csv(&dir.path().join("out/particles.csv"));
    let (id, t, x) = (column(&header, "particle_id"), column(&header, "t"), column(&header, "x"));
    let mut worst: f64 = 0.0;
    for r in &rows {
        let [x0, y] = [map[r[id] as usize][0], map[r[id] as usize][1]];
        worst = worst.max((r[x] - ((1.0 - r[t]) * x0 + r[t] * y)).abs());
    }
    assert!(worst < 1e-9, "deviation {worst}");
}

#[test]
fn sweep_distance_shrinks_with_epsilon() {
    let (dir, cfg) = setup(&grid_config(-2.0));
    let out = ptrans(&["sweep"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("out/sweep.csv"));
    let d = column(&header, "coupling_distance");
    assert!(rows.windows(2).all(|w| w[1][d] <= w[0][d]), "{rows:?}");
}

#[test]
fn check_passes_on_both_modes() {
    for text in [DOUBLE_INTEGRATOR.to_string(), grid_config(-2.0)] {
        let (dir, cfg) = setup(&text);
        let out = ptrans(&["check"], &cfg);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
        assert!(dir.path().join("out/check.csv").exists());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, cfg) = setup(DOUBLE_INTEGRATOR);
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = ptrans(&["sample-paths", "--paths", "50", "--epsilon", "0.5", "--seed", "11", "--out", out_dir.to_str().unwrap()], &cfg);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read(out_dir.join("paths_eps0.5.csv")).unwrap(), fs::read(out_dir.join("stats_eps0.5.csv")).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn density_csv_paths_resolve_against_config_directory() {
    let dir = TempDir::new().unwrap();
    let mut rho = String::from("x,rho\n");
    for i in 0..64 {
        let x = (i as f64 + 0.5) / 64.0;
        rho.push_str(&format!("{x},{}\n", 1.0 + x));
    }
    fs::create_dir(dir.path().join("data")).unwrap();
    fs::write(dir.path().join("data/rho.csv"), rho).unwrap();
    let text = grid_config(-1.0).replace(r#"{"builtin": "paper62_rho0"}"#, r#"{"csv": "data/rho.csv"}"#);
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, text).unwrap();
    let out = ptrans(&["omt1d"], &cfg);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, map) = read_csv(&dir.path().join("out/map.csv"));
    assert_eq!(map.len(), 64);
}
