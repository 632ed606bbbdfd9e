use std::path::{Path, PathBuf};

use obstacle_bsde::experiment::{self, default_config, load_config, parse_config, with_override};
use obstacle_bsde::Error;

fn bundled() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut v: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn every_case_has_a_bundled_config_matching_its_defaults() {
    let files = bundled();
    assert_eq!(files.len(), experiment::list_cases(None).len());
    for f in files {
        let cfg = load_config(&f).unwrap();
        assert_eq!(f.file_stem().unwrap().to_str().unwrap(), cfg.case);
        assert_eq!(cfg, default_config(&cfg.case).unwrap(), "{} drifted from the built-in defaults", f.display());
        let first = std::fs::read_to_string(&f).unwrap().lines().next().unwrap().to_string();
        let info = experiment::list_cases(Some(&cfg.case)).into_iter().find(|c| c.name == cfg.case).unwrap();
        assert_eq!(first, format!("# {}", info.description));
    }
}

#[test]
fn minimal_file_fills_defaults() {
    let cfg = parse_config("schema_version = 1\ncase = \"american_put_style\"\nseed = 9\n").unwrap();
    let mut want = default_config("american_put_style").unwrap();
    want.seed = 9;
    assert_eq!(cfg, want);
}

#[test]
fn schema_version_and_case_are_checked() {
    match parse_config("schema_version = 2\ncase = \"heat_baseline\"\n") {
        Err(Error::Config { line: Some(1), message }) => assert!(message.contains("schema_version")),
        other => panic!("{other:?}"),
    }
    match parse_config("schema_version = 1\n\ncase = \"nope\"\n") {
        Err(Error::Config { line: Some(3), message }) => assert!(message.contains("nope")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_keys_are_rejected_with_a_line() {
    match parse_config("schema_version = 1\ncase = \"heat_baseline\"\n[driver]\nkind = \"zero\"\nratee = 1.0\n") {
        Err(Error::Config { line: Some(5), .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn overrides_revalidate() {
    let cfg = default_config("clock_measure").unwrap();
    let c2 = with_override(&cfg, "scheme.n_paths", "123").unwrap();
    assert_eq!(c2.scheme.n_paths, 123);
    assert!(matches!(with_override(&cfg, "grid.n_steps", "10"), Err(Error::Cfl { .. })));
    assert!(with_override(&cfg, "scheme.n_list", "[4.0, 2.0]").is_err());
    assert!(with_override(&cfg, "grid.nope", "1").is_err());
}
