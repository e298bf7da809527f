use std::path::Path;
use std::process::{Command, Output};

const RATE: &str = "\
dimension = 1
potential.a0 = 2
potential.terms = 1,1
grid.dx = 1/8
grid.dt = 1/8
vmax = 4
effective.n_max = 16
sweep.eps = 1/4, 1/8, 1/16
targets.count = 17
";

fn homog(args: &[&str], config: &str, dir: &Path) -> Output {
    let cfg = dir.join("run.conf");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_homog"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn rate_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = homog(&["rate"], RATE, a.path());
    let ob = homog(&["rate", "--threads", "1"], RATE, b.path());
    assert!(
        oa.status.success(),
        "{}",
        String::from_utf8_lossy(&oa.stderr)
    );
    assert!(ob.status.success());
    let fa = read_dir_sorted(&a.path().join("out"));
    let fb = read_dir_sorted(&b.path().join("out"));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(
        names,
        ["rate.csv", "rate.dat", "rate_fit.csv", "targets.csv"]
    );
    assert_eq!(fa, fb);
    let csv = String::from_utf8(fa[0].1.clone()).unwrap();
    assert!(csv.starts_with("# schema=homog-rate-v1\neps,error\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn parse_errors_exit_with_config_code() {
    let d = tempfile::tempdir().unwrap();
    let out = homog(&["effective"], "dimension = 1\n\nbogus.key = 4\n", d.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn under_resolved_sweep_exits_with_resolution_code() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "dimension = 1\npotential.a0 = 2\npotential.terms = 1,1\ngrid.dx = 1/2\ngrid.dt = 1/2\nvmax = 4\n\
               effective.n_max = 16\nsweep.eps = 1/4, 1/8\ninitial = affine:1.5\n";
    let out = homog(&["rate"], cfg, d.path());
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn failed_property_exits_with_property_code() {
    let d = tempfile::tempdir().unwrap();
    // the cell oracle over two time units is far from converged
    let cfg = "dimension = 1\npotential.a0 = 2\npotential.terms = 1,1\ngrid.dx = 1/4\ngrid.dt = 1/4\nvmax = 4\n\
               effective.n_max = 16\nproperties.horizon = 8\nproperties.oracle_p = 2\nproperties.oracle_time = 2\n";
    let out = homog(&["properties"], cfg, d.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL  cell_oracle_agreement"));
}

#[test]
fn free_properties_and_metric_dump() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "dimension = 1\npotential.a0 = 1\ngrid.dx = 1/4\ngrid.dt = 1/4\nvmax = 4\neffective.n_max = 16\n\
               properties.horizon = 16\nproperties.oracle_time = 16\nmetric.horizon = 2\n";
    let out = homog(&["properties"], cfg, d.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let out = homog(&["metric"], cfg, d.path());
    assert!(out.status.success());
    let dat = std::fs::read_to_string(d.path().join("out/metric.dat")).unwrap();
    // m(2, 0, 0) = 2 in the free case
    assert!(dat.lines().any(|l| l == "0e0 2e0"), "{dat}");
}

#[test]
fn effective_run_writes_tables() {
    let d = tempfile::tempdir().unwrap();
    let cfg = "dimension = 1\npotential.a0 = 2\npotential.terms = 1,1\ngrid.dx = 1/16\ngrid.dt = 1/8\nvmax = 4\neffective.n_max = 32\n";
    let out = homog(&["effective"], cfg, d.path());
    assert!(out.status.success());
    let names: Vec<String> = read_dir_sorted(&d.path().join("out"))
        .into_iter()
        .map(|f| f.0)
        .collect();
    assert_eq!(
        names,
        [
            "diagnostics.csv",
            "effective_summary.csv",
            "hbar.csv",
            "hbar.dat",
            "lbar.csv",
            "lbar.dat"
        ]
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("flat piece radius 0.9"));
}

#[test]
fn missing_config_is_an_io_failure() {
    let out = Command::new(env!("CARGO_BIN_EXE_homog"))
        .args(["metric", "--config", "/nonexistent/run.conf"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
