use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn position_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/position")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spatial-grounding"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_reports_and_prints_table() {
    let tmp = TempDir::new().unwrap();
    let report = tmp.path().join("report");
    let cache = tmp.path().join("cache");
    let config = position_dir().join("config.toml");
    let out = cli(&["run", "--config", path(&config), "--report", path(&report), "--cache", path(&cache)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout(&out);
    assert!(table.contains("+GPL+SG"), "{table}");
    assert!(table.contains("200.00(+300.0%)"), "{table}");
    for name in ["report.json", "report.csv", "report.txt", "records.jsonl", "run_stats.json"] {
        assert!(report.join(name).is_file(), "missing {name}");
    }
    assert_eq!(std::fs::read_to_string(report.join("report.txt")).unwrap(), table);

    let warm = cli(&["run", "--config", path(&config), "--cache", path(&cache)]);
    assert!(warm.status.success());
    assert_eq!(stdout(&warm), table);
    assert!(String::from_utf8_lossy(&warm.stderr).contains("0 backend calls"));
}

#[test]
fn variant_flag_overrides_config() {
    let config = position_dir().join("config.toml");
    let out = cli(&["run", "--config", path(&config), "--variant", "full"]);
    assert!(out.status.success());
    let table = stdout(&out);
    assert!(table.contains("+GPL+SG") && !table.contains('%'), "{table}");
}

#[test]
fn rescore_rebuilds_the_same_report() {
    let tmp = TempDir::new().unwrap();
    let first = tmp.path().join("first");
    let config = position_dir().join("config.toml");
    assert!(cli(&["run", "--config", path(&config), "--report", path(&first)]).status.success());

    let second = tmp.path().join("second");
    let out = cli(&[
        "rescore",
        "--records",
        path(&first.join("records.jsonl")),
        "--benchmark",
        "mme",
        "--model-name",
        "oracle",
        "--report",
        path(&second),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(first.join("report.txt")).unwrap(),
        std::fs::read_to_string(second.join("report.txt")).unwrap()
    );
}

#[test]
fn bad_inputs_fail_with_nonzero_exit() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "version = 1\nbenchmark = \"mme\"\nmanifest = \"m.jsonl\"\nbogus = 3\n").unwrap();
    let out = cli(&["run", "--config", path(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    assert!(!cli(&["run", "--benchmark", "mme"]).status.success());
    let config = position_dir().join("config.toml");
    assert!(!cli(&["run", "--config", path(&config), "--variant", "everything"]).status.success());
}

#[test]
fn extract_prints_two_entities() {
    let out = cli(&["extract", "Is the red car on the left of the man?"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out), "red car\tcar\nman\tman\n");
    let short = cli(&["extract", "Is there a dog?"]);
    assert!(short.status.success());
    assert_eq!(stdout(&short), "dog\tdog\n");
}
