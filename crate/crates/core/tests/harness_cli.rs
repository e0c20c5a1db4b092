use std::process::Command;

use delay_erk::harness::{run_study, Reference, StudyConfig, StudyFile, CSV_HEADER};
use delay_erk::{Error, Method};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_delay-erk"))
}

fn small_study(track: bool) -> StudyConfig {
    let mut cfg = StudyConfig::new("example3", vec![Method::erk2(1.0).unwrap(), Method::gl4()], 3, 5);
    cfg.n = 30;
    cfg.track = track;
    cfg.reference = Some(Reference::Generate {
        k: 8,
        method: Method::gl4(),
        track: true,
    });
    cfg.timing = false;
    cfg
}

#[test]
fn csv_is_deterministic_across_thread_counts() {
    let mut one = small_study(true);
    one.threads = Some(1);
    let mut four = one.clone();
    four.threads = Some(4);
    let a = run_study(&one).unwrap().to_csv();
    let b = run_study(&four).unwrap().to_csv();
    assert_eq!(a, b);
    assert_eq!(a.lines().next(), Some(CSV_HEADER));
    assert_eq!(a.lines().count(), 1 + 2 * 3);
    for line in a.lines().skip(1) {
        assert_eq!(line.split(',').count(), 9, "{line}");
        assert!(line.ends_with(",0"), "{line}");
    }
}

#[test]
fn csv_records_breakpoints_and_rates() {
    let csv = run_study(&small_study(true)).unwrap().to_csv();
    let gl4: Vec<&str> = csv.lines().filter(|l| l.starts_with("example3,gl4,")).collect();
    assert_eq!(gl4.len(), 3);
    let first: Vec<&str> = gl4[0].split(',').collect();
    assert_eq!(first[5], "");
    let last: Vec<&str> = gl4[2].split(',').collect();
    assert!(last[5].parse::<f64>().is_ok());
    let (t, parent) = last[6].split_once(':').expect("one breakpoint");
    assert!((t.parse::<f64>().unwrap() - 0.665).abs() < 5e-3);
    assert_eq!(parent, "0");
}

#[test]
fn config_errors() {
    let mut cfg = small_study(false);
    cfg.kmin = 6;
    assert!(matches!(run_study(&cfg), Err(Error::Config(_))));
    let mut cfg = small_study(false);
    cfg.reference = Some(Reference::Generate {
        k: 5,
        method: Method::gl4(),
        track: true,
    });
    assert!(matches!(run_study(&cfg), Err(Error::Config(_))));
    let mut cfg = StudyConfig::new("example1", vec![Method::euler()], 3, 4);
    cfg.track = true;
    assert!(matches!(run_study(&cfg), Err(Error::Config(_))));
    let cfg = StudyConfig::new("example3", vec![Method::gl4()], 3, 4);
    assert!(matches!(run_study(&cfg), Err(Error::Config(_))));
}

#[test]
fn study_file_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("study.toml");
    std::fs::write(&path, "problem = \"example1\"\nmethods = [\"gl4\"]\nkmin = 3\nkmax = 4\nbogus = 1\n").unwrap();
    assert!(matches!(StudyFile::load(&path), Err(Error::Config(_))));
    std::fs::write(&path, "problem = \"example1\"\nmethods = [\"gl4\"]\nkmin = 3\nkmax = 4\nref = \"manufactured\"\n").unwrap();
    let cfg = StudyConfig::from_file(&StudyFile::load(&path).unwrap()).unwrap();
    assert_eq!(cfg.reference, Some(Reference::Manufactured));
}

#[test]
fn cli_converge_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rates.csv");
    let run = bin()
        .args(["converge", "--problem", "example1", "--methods", "euler,gl4", "--kmin", "3", "--kmax", "5"])
        .args(["--n", "40", "--no-timing", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("gl4: finest rate"));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn cli_reference_then_converge_against_file() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.bin");
    let out = bin()
        .args(["reference", "--problem", "example2", "--h", "2^-8", "--n", "30", "--out"])
        .arg(&reference)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin()
        .args(["converge", "--problem", "example2", "--methods", "erk2", "--kmin", "3", "--kmax", "5", "--n", "30"])
        .arg("--ref")
        .arg(&reference)
        .arg("--no-timing")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with(CSV_HEADER));
    assert_eq!(stdout.lines().count(), 4);
}

#[test]
fn cli_solve_and_phitest() {
    let out = bin()
        .args(["solve", "--problem", "constant-lag", "--method", "gl4", "--h", "2^-5", "--n", "30", "--track"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("breakpoint")).count(), 3);

    let out = bin().args(["phitest", "--cases", "5"]).output().unwrap();
    assert!(out.status.success());
}

#[test]
fn cli_rejects_bad_input() {
    for args in [
        &["solve", "--problem", "nope", "--h", "0.1"][..],
        &["solve", "--problem", "example1", "--method", "rk4", "--h", "0.1"],
        &["solve", "--problem", "example1", "--h", "-1"],
        &["converge", "--problem", "example1"],
    ] {
        let out = bin().args(args).output().unwrap();
        assert!(!out.status.success(), "{args:?} should fail");
    }
}
