use std::path::Path;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obstacle-bsde")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.toml")).display().to_string()
}

#[test]
fn list_shows_the_catalog() {
    let o = bin(&["list"]);
    assert!(o.status.success());
    let s = stdout(&o);
    for case in ["heat_baseline", "deterministic_barrier", "american_put_style"] {
        assert!(s.contains(case), "{case} missing");
    }
}

#[test]
fn list_filters() {
    let o = bin(&["list", "no-such-thing"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).trim().is_empty());
    let s = stdout(&bin(&["list", "lewy"]));
    let names: Vec<&str> = s.lines().filter(|l| !l.starts_with(' ')).map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["lewy_stampacchia_bsde", "lewy_stampacchia_pde"]);
}

#[test]
fn heat_baseline_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["--jobs", "2", "run", "--config", &config("heat_baseline"), "--out", dir.path().to_str().unwrap(), "--svg"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], true);
    assert!(dir.path().join("u_grid.csv").exists());
    assert!(dir.path().join("bridge.csv").exists());
    assert!(std::fs::read_dir(dir.path()).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));
}

#[test]
fn cfl_violation_exits_2_naming_the_step_count() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["run", "clock_measure", "--set", "grid.n_steps=10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("CFL") && e.contains("100 time steps"), "{e}");
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none(), "no artifacts before validation");
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "schema_version = 1\ncase = \"clock_measure\"\n[grid]\nn_stepz = 3\n").unwrap();
    let o = bin(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml:4"), "{}", stderr(&o));
    let o = bin(&["run", "not_a_case"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(bin(&["run"]).status.code() == Some(2));
}

#[test]
fn homographic_sweep_gaps_are_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["run", "homographic_sweep", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.iter().map(|r| r[0]).collect::<Vec<_>>(), [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
    for col in ["sup_gap_Y", "int_gap_Z", "sup_gap_K"] {
        let j = header.iter().position(|h| *h == col).unwrap();
        assert!(rows.windows(2).all(|w| w[1][j] <= w[0][j]), "{col} not monotone");
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (d, jobs) in [(&a, "1"), (&b, "2")] {
        let o = bin(&["--jobs", jobs, "run", "comparison_suite", "--seed", "7", "--out", d.path().to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    }
    let mut files: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert!(!files.is_empty());
    for f in files {
        assert_eq!(std::fs::read(a.path().join(&f)).unwrap(), std::fs::read(b.path().join(&f)).unwrap(), "{f:?}");
    }
}

#[test]
fn sweep_writes_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin(&["sweep", "clock_measure", "--param", "seed", "--values", "1,2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(dir.path().join("seed=1/summary.json").exists());
    assert!(dir.path().join("seed=2/summary.json").exists());
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("value,check,metric,bound,pass\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}
