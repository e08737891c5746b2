use std::path::Path;
use std::process::{Command, Output};

fn lesionseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesionseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lesionseg(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn phantom_split_run_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let split = dir.path().join("split.json");
    ok(&["phantom", "--count", "10", "--seed", "3", "--out", s(&data)]);
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let msg = ok(&["split", "--manifest", s(&manifest), "--seed", "1", "--out", s(&split)]);
    let counts: Vec<usize> = msg.split_whitespace().filter_map(|w| w.parse().ok()).collect();
    let (n_train, n_test) = (counts[0], counts[1]);
    assert_eq!(n_train + n_test, 10);
    assert!(n_test >= 1);

    let r1 = dir.path().join("r1");
    let text = ok(&["run", "--system", "1", "--split", s(&split), "--out", s(&r1)]);
    assert!(text.contains("feedback score 0.00"), "{text}");
    for f in ["per_scan.csv", "summary.json", "curves.csv"] {
        assert!(r1.join(f).exists(), "{f}");
    }

    let r3 = dir.path().join("r3");
    ok(&[
        "run", "--system", "3", "--iterations", "4", "--segmenter", "oracle", "--split", s(&split), "--out", s(&r3),
    ]);
    let eval = ok(&["eval", "--report", s(&r3)]);
    assert!(eval.contains(&format!("{n_test} scans (0 failed), 4 iterations")), "{eval}");
    assert_eq!(std::fs::read_dir(r3.join("sessions")).unwrap().count(), n_test);
}

#[test]
fn plugin_backed_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["phantom", "--count", "3", "--seed", "5", "--out", s(&data)]);
    let plugin = format!("plugin:{} plugin-serve --mode reference", env!("CARGO_BIN_EXE_lesionseg"));
    let out = dir.path().join("r2");
    let text = ok(&[
        "run",
        "--system",
        "2",
        "--iterations",
        "3",
        "--segmenter",
        &plugin,
        "--manifest",
        s(&data.join("manifest.json")),
        "--out",
        s(&out),
    ]);
    assert!(text.contains("negative 0, erase 0"), "{text}");
}

#[test]
fn config_file_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["phantom", "--count", "2", "--seed", "8", "--out", s(&data)]);
    let cfg = dir.path().join("experiment.json");
    std::fs::write(
        &cfg,
        r#"{
  "manifest": "data/manifest.json",
  "seed": 4,
  "system": { "topology": "system3", "iterations": 2, "initial": "threshold", "refinement": "conservative" }
}"#,
    )
    .unwrap();
    let out = dir.path().join("r");
    ok(&["run", "--config", s(&cfg), "--out", s(&out)]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_scans"], 2);
    assert_eq!(summary["iterations"], 2);
}

#[test]
fn bad_invocations_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = lesionseg(&["run", "--system", "4", "--manifest", "x", "--out", s(dir.path())]);
    assert!(!out.status.success());
    let out = lesionseg(&["run", "--system", "2", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--split or --manifest"));
    let out = lesionseg(&["eval", "--report", s(&dir.path().join("missing"))]);
    assert!(!out.status.success());
    let out = lesionseg(&["phantom", "--count", "1", "--height", "8", "--out", s(&dir.path().join("p"))]);
    assert!(!out.status.success());
}
