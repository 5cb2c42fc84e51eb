use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_freebound"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn freebound")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = "name = small\ngamma = 0.5\nresolutions = 33\nstages = stokes, audit, beta\nbeta_measures = 5\nseed = 7\ncheck = solver-soundness\ntolerance = 1e-8\n";

#[test]
fn malformed_scenario_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--config",
        scenario("malformed.cfg").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));
}

#[test]
fn bad_resolution_flag_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--resolution",
        "40",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolution"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = run(&["run", "--config", "/nonexistent/scenario.cfg"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stage_without_dump_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = run(&[
        "stokes",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("field-33.csv"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), SMALL);
    for d in [&a, &b] {
        let out = run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["report.json", "field-33.csv", "history-33.csv", "free-boundary-33.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn staged_pipeline_matches_single_run() {
    let whole = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    let cfg = write_config(
        whole.path(),
        "name = s\nresolutions = 33\nstages = stokes\nfield = sector\n",
    );
    let cfg = cfg.to_str().unwrap();
    assert!(run(&["run", "--config", cfg, "--out", whole.path().to_str().unwrap()])
        .status
        .success());
    assert!(
        run(&["solve", "--config", cfg, "--out", staged.path().to_str().unwrap()])
            .status
            .success()
    );
    assert!(
        run(&["stokes", "--config", cfg, "--out", staged.path().to_str().unwrap()])
            .status
            .success()
    );
    let read = |d: &Path| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap()
    };
    assert_eq!(
        read(whole.path())["runs"][0]["stokes"],
        read(staged.path())["runs"][0]["stokes"]
    );
}

#[test]
fn json_and_csv_reports_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(run(&["run", "--config", cfg, "--out", d]).status.success());
    assert!(run(&["run", "--config", cfg, "--out", d, "--format", "csv"])
        .status
        .success());
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut compared = 0;
    for line in csv.lines().skip(1) {
        let (path, value) = line.split_once(',').unwrap();
        let pointer = format!("/{}", path.replace('.', "/"));
        let leaf = json
            .pointer(&pointer)
            .unwrap_or_else(|| panic!("{path} missing from JSON"));
        if let Some(y) = leaf.as_f64() {
            let x: f64 = value.parse().unwrap();
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{path}: {x} vs {y}");
            compared += 1;
        }
    }
    assert!(compared > 20, "{compared}");
    let checks = std::fs::read_to_string(dir.path().join("checks.csv")).unwrap();
    assert!(checks.lines().nth(1).unwrap().starts_with("solver-soundness,solve,"));
    assert!(dir.path().join("violations.csv").exists());
}

#[test]
fn zero_boundary_scenario_reports_empty_structures() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "run",
        "--config",
        scenario("zero-boundary.cfg").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let r = &json["runs"][0];
    assert_eq!(r["solve"]["energy"]["total"], 0.0);
    assert_eq!(r["audit"]["free_boundary"]["vertices"], 0);
    assert_eq!(r["strata"]["s_points"].as_array().unwrap().len(), 0);
    assert_eq!(r["beta"]["free_boundary_mass"], 0.0);
    assert!(json["violations"].as_array().unwrap().is_empty());
}

#[test]
fn failing_check_exits_with_check_code() {
    let dir = tempfile::tempdir().unwrap();
    // the sampled sector at 33^2 cannot meet a 1e-6 corner tolerance
    let cfg = write_config(
        dir.path(),
        "resolutions = 33\nfield = sector\ncorner_fit_radius = 1\ncheck = corner-angle\ntolerance = 1e-6\n",
    );
    let out = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL corner-angle"));
}

#[test]
fn seed_flag_changes_only_seeded_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = write_config(a.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    assert!(run(&[
        "run",
        "--config",
        cfg,
        "--out",
        a.path().to_str().unwrap(),
        "--only",
        "beta"
    ])
    .status
    .success());
    assert!(run(&[
        "run",
        "--config",
        cfg,
        "--out",
        b.path().to_str().unwrap(),
        "--only",
        "beta",
        "--seed",
        "8"
    ])
    .status
    .success());
    let read = |d: &Path| -> serde_json::Value {
        serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap()
    };
    let (x, y) = (read(a.path()), read(b.path()));
    assert_eq!(x["runs"][0]["solve"], y["runs"][0]["solve"]);
    assert_eq!(x["scenario"]["seed"], "7");
    assert_eq!(y["scenario"]["seed"], "8");
}

#[test]
fn stages_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "resolutions = 65\nfield = sector\nstages = weiss, blowup, strata, beta, audit\n",
    );
    let out = run(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = |name: &str| {
        let text = std::fs::read_to_string(dir.path().join(name)).unwrap_or_else(|_| panic!("{name} missing"));
        text.lines().next().unwrap().to_string()
    };
    assert_eq!(header("weiss-65.csv"), "x,y,r,W,allowance");
    assert_eq!(header("blowup-deficits-65.csv"), "x,y,r,j,deficit,direction");
    assert_eq!(header("strata-65.csv"), "x,y,r,j,deficit");
    assert_eq!(header("beta-65.csv"), "x,y,r,k,beta2,lambda1,lambda2,mass");
    assert_eq!(header("free-boundary-65.csv"), "chain,x,y");
    assert_eq!(header("history-65.csv"), "sweep,energy");
    // blow-ups live on the reference grid over [-1, 1]^2: `nx,ny,h,ox,oy`
    let grid: Vec<f64> = header("blowup-65-0.csv")
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(grid.len(), 5);
    assert_eq!((grid[3], grid[4]), (-1.0, -1.0));
}
