use std::process::{Command, Output};

fn qkr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkr"))
        .args(args)
        .env("QKR_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn set_a_is_commensurability_clean() {
    let o = qkr(&["check-commensurate"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("# clean"));
}

#[test]
fn rational_ratio_is_flagged() {
    let o = qkr(&["check-commensurate", "--omega2", "3.3", "--omega3", "3.3"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("commensurate relations found"));
}

#[test]
fn unknown_figure_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkr(&["reproduce", "fig6", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn paper_scale_requires_confirmation() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkr(&[
        "reproduce",
        "fig9",
        "--scale",
        "paper",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("CPU hours"));
}

#[test]
fn invalid_parameters_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkr(&["evolve", "--k", "-1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_evolve_writes_series_and_echoes_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkr(&[
        "evolve",
        "--k",
        "5",
        "--epsilon",
        "0.24",
        "--kbar",
        "2.89",
        "--n-traj",
        "8",
        "--t-max",
        "50",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("kbar = 2.89"), "{out}");
    let series = std::fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert_eq!(
        series.lines().next().unwrap().split(',').next(),
        Some("run_id")
    );
    assert!(series.lines().count() > 10);
}

#[test]
fn anderson_map_writes_lattice_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = qkr(&["anderson-map", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["hopping_1d.csv", "onsite_1d.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(!dir.path().join("hopping_3d.csv").exists());
}
