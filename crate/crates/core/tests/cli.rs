use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ngso-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reports_derived_quantities() {
    let text = ok(&sim(&["validate", "--preset", "mini"]));
    assert!(text.contains("offered load"), "{text}");
}

#[test]
fn literal_preset_warns_about_intra_plane_links() {
    let text = ok(&sim(&["validate", "--preset", "table1"]));
    assert!(text.contains("no intra-plane ISL"), "{text}");
}

#[test]
fn unknown_preset_is_a_config_error() {
    let out = sim(&["validate", "--preset", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("preset"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[engine]\nbuffr = 3\n").unwrap();
    let out = sim(&["validate", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("buffr"));
}

#[test]
fn pretrain_is_reproducible_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for ck in [&a, &b] {
        let text = ok(&sim(&["pretrain", "--preset", "mini", "--steps", "1000", "--checkpoint", s(ck)]));
        assert!(text.contains("pretrained"), "{text}");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ngso_routing::dql::AgentPool::load(&a).unwrap();

    let out = dir.path().join("eval");
    let text = ok(&sim(&[
        "evaluate", "--preset", "mini", "--policy", "rl,hybrid", "--eta", "0.6", "--seeds", "1",
        "--checkpoint", s(&a), "--out", s(&out),
    ]));
    assert!(text.contains("hybrid"), "{text}");
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn table_policy_needs_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    ok(&sim(&[
        "evaluate", "--preset", "mini", "--policy", "table", "--eta", "0.2,1.2", "--seeds", "2",
        "--no-timing", "--traces", "--out", s(&out),
    ]));
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), ngso_routing::engine::csv_header());
    assert_eq!(lines.count(), 4);
    for f in ["resolved_config.toml", "summary.json", "delays_table_eta0.2_seed42.txt", "traces_table_eta1.2_seed43.jsonl"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["points"].as_array().unwrap().len(), 2);

    // The resolved config reproduces the run.
    let again = dir.path().join("again");
    ok(&sim(&[
        "evaluate", "--config", s(&out.join("resolved_config.toml")), "--out", s(&again),
    ]));
    assert_eq!(
        std::fs::read(out.join("results.csv")).unwrap(),
        std::fs::read(again.join("results.csv")).unwrap()
    );
}

#[test]
fn missing_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = sim(&[
        "evaluate", "--preset", "mini", "--policy", "hybrid", "--seeds", "1",
        "--checkpoint", s(&dir.path().join("absent.json")), "--out", s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}
