use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metaplan"))
}

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

#[test]
fn run_both_modes_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let status = bin()
        .args(["run", "--trials", "5", "--icl", "both", "--seed", "3"])
        .arg("--transcripts")
        .arg(repo().join("transcripts/flawed"))
        .arg("--db")
        .arg(repo().join("data/demos.jsonl"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8(status.stdout).unwrap();
    assert!(stdout.contains("overall"));

    let without = dir.path().join("report.no_icl.json");
    let with = dir.path().join("report.icl.json");
    let cmp = bin().arg("compare").arg(&without).arg(&with).args(["--format", "json"]).output().unwrap();
    assert!(cmp.status.success());
    let v: serde_json::Value = serde_json::from_slice(&cmp.stdout).unwrap();
    assert_eq!(v["overall"]["trials"], 20);
}

#[test]
fn task_failures_are_not_infrastructure_errors() {
    let status = bin()
        .args(["run", "--trials", "3", "--icl", "off", "--tasks", "open_drawer"])
        .arg("--transcripts")
        .arg(repo().join("transcripts/flawed"))
        .output()
        .unwrap();
    assert!(status.status.success());
}

#[test]
fn missing_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--icl", "off"])
        .arg("--transcripts")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no transcripts"));

    let out = bin()
        .args(["run", "--icl", "on"])
        .arg("--transcripts")
        .arg(repo().join("transcripts/good"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn seed_reproduces_shipped_database_and_compacts() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("demos.jsonl");
    let seeded = bin()
        .args(["db", "seed"])
        .arg("--transcripts")
        .arg(repo().join("transcripts/good"))
        .arg("--out")
        .arg(&db)
        .output()
        .unwrap();
    assert!(seeded.status.success());
    let shipped = std::fs::read(repo().join("data/demos.jsonl")).unwrap();
    assert_eq!(std::fs::read(&db).unwrap(), shipped);

    assert!(bin().args(["db", "compact"]).arg(&db).output().unwrap().status.success());
    assert_eq!(std::fs::read(&db).unwrap(), shipped);

    let list = bin().args(["db", "list"]).arg(&db).output().unwrap();
    assert_eq!(String::from_utf8(list.stdout).unwrap().lines().count(), 4);
}
